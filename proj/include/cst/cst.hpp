// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "cst/errors.hpp"
#include "cst/rng.hpp"
#include "cst/tensor.hpp"
#include "cst/ops.hpp"
#include "cst/nn_ops.hpp"
#include "cst/optim.hpp"
#include "cst/grad_check.hpp"
#include "cst/array.hpp"
#include "cst/cassi.hpp"
#include "cst/layers.hpp"
#include "cst/sasm.hpp"
#include "cst/sah_msa.hpp"
#include "cst/model.hpp"
#include "cst/metrics.hpp"
#include "cst/scene.hpp"
#include "cst/config.hpp"
#include "cst/io.hpp"
#include "cst/app.hpp"

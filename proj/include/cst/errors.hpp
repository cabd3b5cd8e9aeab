// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace cst {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Incompatible shapes or geometry.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// Non-finite values produced by an op, or NaN gradients fed to the optimizer.
class NumericError : public Error {
public:
    using Error::Error;
};

/// Misuse of the autograd graph (non-scalar loss, consumed or detached graph).
class GraphError : public Error {
public:
    using Error::Error;
};

/// A function probed by grad_check returned different values for identical input.
class DeterminismError : public Error {
public:
    using Error::Error;
};

/// Invalid configuration (unknown keys, indivisible geometry, bad ranges).
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Unreadable, malformed, or inconsistent data files.
class DataError : public Error {
public:
    using Error::Error;
};

inline std::string shape_str(const std::vector<std::size_t>& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

}  // namespace cst

#!/usr/bin/env python3
"""Regenerates the golden simulate fixture in tests/data/golden.

The scene and mask hold multiples of 1/256 so every sum below is exact in
float32 and the expected measurement does not depend on summation order.
"""
import json
import pathlib

import numpy as np

H, W, N, STEP = 6, 5, 3, 2
OUT = pathlib.Path(__file__).resolve().parent / "golden"


def write_raster(path, array):
    header = {"dims": list(array.shape), "dtype": "f32", "order": "row-major", "bands_last": True}
    with open(path, "wb") as f:
        f.write(json.dumps(header, separators=(",", ":")).encode() + b"\n")
        f.write(np.ascontiguousarray(array, dtype="<f4").tobytes())


def main():
    y, x, n = np.meshgrid(np.arange(H), np.arange(W), np.arange(N), indexing="ij")
    cube = ((7 * y + 3 * x + 11 * n) % 256) / 256.0
    mask = ((np.arange(H)[:, None] * 5 + np.arange(W)[None, :] * 3) % 4 != 0).astype(np.float64)

    meas = np.zeros((H, W + STEP * (N - 1)))
    for band in range(N):
        meas[:, STEP * band : STEP * band + W] += mask * cube[:, :, band]

    OUT.mkdir(exist_ok=True)
    write_raster(OUT / "toy.cube.raster", cube)
    write_raster(OUT / "mask.raster", mask)
    write_raster(OUT / "toy.meas.expected", meas)


if __name__ == "__main__":
    main()

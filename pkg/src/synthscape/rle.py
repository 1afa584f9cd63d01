"""Run-length encoding for boolean masks.

Masks are flattened row-major (time frames first, then frequency bins).
``counts`` alternates runs of False and True, always starting with a
(possibly zero-length) False run, and ``size`` records the grid shape.
"""

from __future__ import annotations

import numpy as np

__all__ = ["encode", "decode"]


def encode(mask: np.ndarray) -> dict:
    m = np.asarray(mask, dtype=bool)
    if m.ndim != 2:
        raise ValueError("RLE masks must be 2-D")
    flat = m.ravel()
    if flat.size == 0:
        return {"size": list(m.shape), "counts": []}
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate(([0], change, [flat.size]))
    counts = np.diff(bounds).tolist()
    if flat[0]:
        counts.insert(0, 0)
    return {"size": [int(m.shape[0]), int(m.shape[1])], "counts": [int(c) for c in counts]}


def decode(rle: dict) -> np.ndarray:
    rows, cols = (int(v) for v in rle["size"])
    counts = np.asarray(rle["counts"], dtype=np.int64)
    if counts.sum() != rows * cols:
        raise ValueError(f"RLE counts sum to {counts.sum()}, grid holds {rows * cols} cells")
    values = np.arange(counts.size) % 2 == 1
    return np.repeat(values, counts).reshape(rows, cols)

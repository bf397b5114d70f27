"""Primitive operations on single 2-D score/activation maps and 3-D feature maps.

All functions are pure, operate on float64 NumPy arrays and leave their
inputs untouched.  Feature maps are indexed ``[row, column, channel]``.
"""

from __future__ import annotations

import numpy as np

from partmint.errors import DimensionMismatchError


def as_feature_map(fmap) -> np.ndarray:
    """Validate and return ``fmap`` as a float64 (H, W, D) array."""
    arr = np.asarray(fmap, dtype=np.float64)
    if arr.ndim != 3:
        raise DimensionMismatchError(
            f"feature map must be 3-D (H, W, D), got shape {arr.shape}"
        )
    if min(arr.shape) < 1:
        raise DimensionMismatchError(f"feature map dimensions must be >= 1, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("feature map contains non-finite values")
    return arr


def as_map2d(m) -> np.ndarray:
    arr = np.asarray(m, dtype=np.float64)
    if arr.ndim != 2 or min(arr.shape) < 1:
        raise DimensionMismatchError(f"expected a non-empty 2-D map, got shape {arr.shape}")
    return arr


def conv1x1(fmap, kernel) -> np.ndarray:
    """Correlate every feature vector of ``fmap`` with a depth-D ``kernel``.

    Returns the (H, W) map of dot products ``sum_d fmap[h, w, d] * kernel[d]``.
    """
    arr = as_feature_map(fmap)
    k = np.asarray(kernel, dtype=np.float64)
    if k.ndim != 1 or k.shape[0] != arr.shape[2]:
        raise DimensionMismatchError(
            f"kernel length {k.shape} does not match feature depth {arr.shape[2]}"
        )
    return arr @ k


def spatial_softmax(score_map) -> np.ndarray:
    """Softmax over all cells of a 2-D score map.

    Uses max-subtraction so arbitrarily large scores cannot overflow.
    The output is nonnegative and sums to 1.
    """
    s = as_map2d(score_map)
    shifted = s - s.max()
    e = np.exp(shifted)
    return e / e.sum()


def uniform_filter_3x3(act_map) -> np.ndarray:
    """Sum each cell's 3x3 neighborhood, zero-padded at the borders.

    The kernel is the all-ones 3x3 stencil (a neighborhood sum, not a mean),
    so for a softmax output the result stays within [0, 1].
    """
    a = as_map2d(act_map)
    h, w = a.shape
    padded = np.zeros((h + 2, w + 2), dtype=a.dtype)
    padded[1:-1, 1:-1] = a
    out = np.zeros_like(a)
    for dh in range(3):
        for dw in range(3):
            out += padded[dh : dh + h, dw : dw + w]
    return out


def argmax2d(m) -> tuple[int, int, float]:
    """Return ``(h, w, value)`` of the maximum cell.

    Ties resolve to the smallest row-major linear index.
    """
    arr = as_map2d(m)
    idx = int(arr.argmax())
    h, w = divmod(idx, arr.shape[1])
    return h, w, float(arr[h, w])

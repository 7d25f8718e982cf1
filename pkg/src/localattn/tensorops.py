"""Dense-array substrate: matrix products, masked softmax, and window gathering.

Values are plain numpy arrays, interpreted as (batch, channels, height, width)
when rank 4. Everything here is a pure function of its inputs; float64 is used
on verification paths and float32 is accepted for training paths.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateGroupError, DimensionError, UnsupportedExtentError


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """2-D matrix product with shape checking.

    Accumulation is delegated to BLAS, which is deterministic run-to-run for
    fixed shapes on a fixed machine.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul inner extents differ: {a.shape} x {b.shape}")
    return a @ b


def softmax_axis(x: np.ndarray, axis: int, mask: np.ndarray | None = None) -> np.ndarray:
    """Numerically stabilized softmax along `axis` with optional boolean mask.

    Masked-out slots are exactly zero in the output; each group of unmasked
    slots sums to one. A group with no unmasked entry raises
    DegenerateGroupError.
    """
    x = np.asarray(x)
    if not -x.ndim <= axis < x.ndim:
        raise DimensionError(f"axis {axis} out of range for rank {x.ndim}")
    if mask is None:
        m = np.max(x, axis=axis, keepdims=True)
        e = np.exp(x - m)
        return e / np.sum(e, axis=axis, keepdims=True)

    mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
    neg_inf = np.array(-np.inf, dtype=x.dtype)
    masked = np.where(mask, x, neg_inf)
    m = np.max(masked, axis=axis, keepdims=True)
    if np.any(np.isneginf(m)):
        raise DegenerateGroupError("softmax group with every slot masked out")
    e = np.where(mask, np.exp(masked - m), 0.0)
    return e / np.sum(e, axis=axis, keepdims=True)


@dataclass
class NeighborhoodIndex:
    """Bookkeeping for one k x k window centered on pixel (i, j).

    `members` lists the in-bounds absolute coordinates in row-major window
    order, `offsets` the matching (a - i, b - j) pairs, and `valid_mask` flags
    each of the k*k nominal slots (row-major) as in- or out-of-image.
    """

    center: tuple[int, int]
    extent: int
    members: list[tuple[int, int]]
    offsets: list[tuple[int, int]]
    valid_mask: np.ndarray


def extract_neighborhood(x: np.ndarray, i: int, j: int, k: int):
    """Copy the k x k window of `x` centered at pixel (i, j).

    Out-of-image slots are zero-filled and flagged False in the index's
    valid_mask. Only odd k is meaningful for a centered window.
    """
    x = np.asarray(x)
    if x.ndim != 4:
        raise DimensionError(f"expected rank-4 input (N, C, H, W), got shape {x.shape}")
    if k < 1 or k % 2 == 0:
        raise UnsupportedExtentError(f"neighborhood extent must be odd and positive, got {k}")
    n, c, height, width = x.shape
    if not (0 <= i < height and 0 <= j < width):
        raise IndexError(f"center ({i}, {j}) outside image of size {height}x{width}")

    half = k // 2
    window = np.zeros((n, c, k, k), dtype=x.dtype)
    valid = np.zeros(k * k, dtype=bool)
    members: list[tuple[int, int]] = []
    offsets: list[tuple[int, int]] = []
    for u in range(k):
        a = i + u - half
        for v in range(k):
            b = j + v - half
            if 0 <= a < height and 0 <= b < width:
                window[:, :, u, v] = x[:, :, a, b]
                valid[u * k + v] = True
                members.append((a, b))
                offsets.append((a - i, b - j))
    index = NeighborhoodIndex(center=(i, j), extent=k, members=members,
                              offsets=offsets, valid_mask=valid)
    return window, index


def window_validity(height: int, width: int, k: int) -> np.ndarray:
    """Boolean (H, W, k*k) array: which window slots are in-image per pixel."""
    half = k // 2
    rows = np.arange(height)[:, None] + (np.arange(k) - half)[None, :]      # (H, k)
    cols = np.arange(width)[:, None] + (np.arange(k) - half)[None, :]       # (W, k)
    row_ok = (rows >= 0) & (rows < height)
    col_ok = (cols >= 0) & (cols < width)
    valid = row_ok[:, None, :, None] & col_ok[None, :, None, :]             # (H, W, k, k)
    return valid.reshape(height, width, k * k)


def pad_hw(x: np.ndarray, pad: int, value: float = 0.0) -> np.ndarray:
    """Pad the trailing two (spatial) axes by `pad` on every side."""
    if pad == 0:
        return x
    widths = [(0, 0)] * (x.ndim - 2) + [(pad, pad), (pad, pad)]
    return np.pad(x, widths, constant_values=value)


def sliding_windows(x_padded: np.ndarray, k: int) -> np.ndarray:
    """View of all k x k windows of a (..., Hp, Wp) array: shape (..., H, W, k, k)."""
    return np.lib.stride_tricks.sliding_window_view(
        x_padded, (k, k), axis=(x_padded.ndim - 2, x_padded.ndim - 1))

"""Directional running-max pooling used by the corner heads.

The bottom-right head scans left-to-right along rows and top-to-bottom along
columns (prefix maxima); the top-left head scans right-to-left and
bottom-to-top (suffix maxima). Ties go to the element met first in scan
order, which only matters for where gradients are routed.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor

# axis 3 is width, axis 2 is height
_WIDTH, _HEIGHT = 3, 2


def prefix_max_array(x: np.ndarray, axis: int) -> np.ndarray:
    return np.maximum.accumulate(x, axis=axis)


def suffix_max_array(x: np.ndarray, axis: int) -> np.ndarray:
    return np.flip(np.maximum.accumulate(np.flip(x, axis=axis), axis=axis), axis=axis).copy()


def prefix_argmax_array(x: np.ndarray, axis: int) -> np.ndarray:
    """Index of the first element attaining each running maximum."""
    n = x.shape[axis]
    running = np.maximum.accumulate(x, axis=axis)
    shape = [1] * x.ndim
    shape[axis] = n
    idx = np.arange(n).reshape(shape)
    prev = np.concatenate(
        [np.full_like(np.take(x, [0], axis=axis), -np.inf),
         np.take(running, np.arange(n - 1), axis=axis)], axis=axis)
    # strict '>' keeps the earlier position on ties
    starts = np.where(x > prev, idx, 0)
    return np.maximum.accumulate(starts, axis=axis)


def suffix_argmax_array(x: np.ndarray, axis: int) -> np.ndarray:
    n = x.shape[axis]
    rev = prefix_argmax_array(np.flip(x, axis=axis), axis)
    return np.flip(n - 1 - rev, axis=axis).copy()


def route_gradient(grad_out: np.ndarray, src: np.ndarray, axis: int) -> np.ndarray:
    """Scatter-add each output gradient onto the input position it came from."""
    moved_g = np.moveaxis(grad_out, axis, -1)
    moved_s = np.moveaxis(src, axis, -1)
    n = moved_g.shape[-1]
    flat_g = moved_g.reshape(-1, n)
    flat_s = moved_s.reshape(-1, n)
    rows = np.arange(flat_g.shape[0])[:, None] * n
    out = np.bincount((rows + flat_s).ravel(), weights=flat_g.ravel(),
                      minlength=flat_g.size).reshape(flat_g.shape)
    return np.moveaxis(out.reshape(moved_g.shape), -1, axis)


# direction name -> (axis, is_prefix)
DIRECTIONS = {
    "prefix_w": (_WIDTH, True),
    "prefix_h": (_HEIGHT, True),
    "suffix_w": (_WIDTH, False),
    "suffix_h": (_HEIGHT, False),
}


def pool_array(x: np.ndarray, direction: str) -> np.ndarray:
    axis, is_prefix = DIRECTIONS[direction]
    return prefix_max_array(x, axis) if is_prefix else suffix_max_array(x, axis)


def pool_argmax_array(x: np.ndarray, direction: str) -> np.ndarray:
    axis, is_prefix = DIRECTIONS[direction]
    return prefix_argmax_array(x, axis) if is_prefix else suffix_argmax_array(x, axis)


def pool_prefix_max_w(f: Tensor) -> Tensor:
    """Bottom pooling: running max along each row, left to right."""
    return Tensor._wrap(prefix_max_array(f.data, _WIDTH))


def pool_prefix_max_h(f: Tensor) -> Tensor:
    """Right pooling: running max down each column, top to bottom."""
    return Tensor._wrap(prefix_max_array(f.data, _HEIGHT))


def pool_suffix_max_w(f: Tensor) -> Tensor:
    """Top pooling: running max along each row, right to left."""
    return Tensor._wrap(suffix_max_array(f.data, _WIDTH))


def pool_suffix_max_h(f: Tensor) -> Tensor:
    """Left pooling: running max up each column, bottom to top."""
    return Tensor._wrap(suffix_max_array(f.data, _HEIGHT))

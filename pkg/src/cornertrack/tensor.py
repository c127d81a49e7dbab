"""Dense rank-4 tensors and the forward numeric kernels.

Every kernel is a pure function of its inputs. Tensors are stored as
C-ordered float64 numpy arrays of shape (batch, channel, height, width)
and are read-only once constructed.
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Raised when tensor extents are incompatible with an operation."""


class ParameterError(ValueError):
    """Raised when a scalar kernel parameter is out of its domain."""


class Tensor:
    """Immutable (batch, channel, height, width) array of doubles."""

    __slots__ = ("_data",)

    def __init__(self, data, *, copy: bool = True):
        arr = np.array(data, dtype=np.float64, order="C", copy=copy or None)
        if arr.ndim > 4:
            raise ShapeError(f"tensor rank must be <= 4, got shape {arr.shape}")
        while arr.ndim < 4:
            arr = arr[np.newaxis]
        if any(n < 1 for n in arr.shape):
            raise ShapeError(f"all extents must be >= 1, got {arr.shape}")
        arr = np.ascontiguousarray(arr)
        arr.setflags(write=False)
        self._data = arr

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        # internal fast path for freshly computed arrays nobody else holds
        t = cls.__new__(cls)
        if arr.dtype != np.float64 or not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr, dtype=np.float64)
        if arr.ndim != 4 or min(arr.shape) < 1:
            raise ShapeError(f"expected a non-empty rank-4 array, got {arr.shape}")
        arr.setflags(write=False)
        t._data = arr
        return t

    @classmethod
    def zeros(cls, shape: Sequence[int]) -> "Tensor":
        return cls._wrap(np.zeros(tuple(shape), dtype=np.float64))

    @classmethod
    def full(cls, shape: Sequence[int], value: float) -> "Tensor":
        return cls._wrap(np.full(tuple(shape), float(value), dtype=np.float64))

    @property
    def data(self) -> np.ndarray:
        return self._data

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self._data.shape  # type: ignore[return-value]

    @property
    def size(self) -> int:
        return self._data.size

    def flat(self) -> np.ndarray:
        return self._data.reshape(-1)

    def numpy(self) -> np.ndarray:
        """Writable copy of the underlying array."""
        return self._data.copy()

    def __eq__(self, other) -> bool:
        if not isinstance(other, Tensor):
            return NotImplemented
        return self.shape == other.shape and bool(np.array_equal(self._data, other._data))

    __hash__ = None  # type: ignore[assignment]

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _require_same_shape(a: Tensor, b: Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{what}: shapes differ, {a.shape} vs {b.shape}")


def conv_output_size(n: int, k: int, stride: int, padding: int) -> int:
    return (n + 2 * padding - k) // stride + 1


def pad_spatial(x: np.ndarray, padding: int) -> np.ndarray:
    n, c, h, w = x.shape
    out = np.zeros((n, c, h + 2 * padding, w + 2 * padding))
    out[:, :, padding:padding + h, padding:padding + w] = x
    return out


def conv_windows(x: np.ndarray, kh: int, kw: int, stride: int, padding: int) -> np.ndarray:
    """Strided (n, c, ho, wo, kh, kw) read-only view of the zero-padded input."""
    if padding:
        x = pad_spatial(x, padding)
    n, c, h, w = x.shape
    ho = (h - kh) // stride + 1
    wo = (w - kw) // stride + 1
    s0, s1, s2, s3 = x.strides
    return np.lib.stride_tricks.as_strided(
        x, (n, c, ho, wo, kh, kw), (s0, s1, s2 * stride, s3 * stride, s2, s3), writeable=False)


def conv2d_array(x: np.ndarray, w: np.ndarray, b: np.ndarray | None,
                 stride: int = 1, padding: int = 0) -> np.ndarray:
    """Cross-correlation on raw arrays; shapes are assumed checked."""
    oc, _, kh, kw = w.shape
    if kh == kw == 1 and stride == 1 and padding == 0:
        out = np.tensordot(x, w[:, :, 0, 0], axes=([1], [1]))  # (n, h, w, oc)
        out = out.transpose(0, 3, 1, 2)
    else:
        win = conv_windows(x, kh, kw, stride, padding)
        out = np.tensordot(win, w, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)  # (n, oc, ho, wo)
    if b is not None:
        out = out + np.reshape(b, (1, -1, 1, 1))
    return np.ascontiguousarray(out)


def conv2d(input: Tensor, kernel: Tensor, bias: Sequence[float] | np.ndarray | None = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation (no kernel flip).

    ``kernel`` has shape (out_channels, in_channels, kh, kw) and ``bias`` has
    one entry per output channel.
    """
    if stride < 1:
        raise ParameterError(f"stride must be positive, got {stride}")
    if padding < 0:
        raise ParameterError(f"padding must be non-negative, got {padding}")
    n, c, h, w = input.shape
    oc, ic, kh, kw = kernel.shape
    if ic != c:
        raise ShapeError(f"conv2d: kernel expects {ic} input channels, input has {c}")
    if h + 2 * padding < kh or w + 2 * padding < kw:
        raise ShapeError(
            f"conv2d: kernel {kh}x{kw} larger than padded input {h + 2 * padding}x{w + 2 * padding}")
    bias_arr = None
    if bias is not None:
        bias_arr = np.asarray(bias, dtype=np.float64).reshape(-1)
        if bias_arr.size != oc:
            raise ShapeError(f"conv2d: bias has {bias_arr.size} entries, expected {oc}")
    return Tensor._wrap(conv2d_array(input.data, kernel.data, bias_arr, stride, padding))


def relu(input: Tensor) -> Tensor:
    return Tensor._wrap(np.maximum(input.data, 0.0))


def sigmoid_array(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def sigmoid(input: Tensor) -> Tensor:
    return Tensor._wrap(sigmoid_array(input.data))


def add(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "add")
    return Tensor._wrap(a.data + b.data)


def window_max_array(x: np.ndarray, window: int) -> np.ndarray:
    r = window // 2
    padded = np.pad(x, ((0, 0), (0, 0), (r, r), (r, r)), mode="edge")
    h, w = x.shape[2:]
    out = padded[:, :, 0:h, 0:w].copy()
    for i in range(window):
        for j in range(window):
            np.maximum(out, padded[:, :, i:i + h, j:j + w], out=out)
    return out


def window_max(input: Tensor, window: int) -> Tensor:
    """Centered window x window maximum with edge replication."""
    if window < 1 or window % 2 == 0:
        raise ParameterError(f"window must be an odd positive integer, got {window}")
    # a radius beyond the extent would only replicate edge values already seen
    if window // 2 > min(input.shape[2], input.shape[3]):
        raise ParameterError(
            f"window {window} too large for spatial extents {input.shape[2]}x{input.shape[3]}")
    return Tensor._wrap(window_max_array(input.data, window))


def stack_batch(tensors: Iterable[Tensor]) -> Tensor:
    """Concatenate tensors of identical (C, H, W) along the batch axis."""
    arrs = [t.data for t in tensors]
    if not arrs:
        raise ShapeError("stack_batch needs at least one tensor")
    first = arrs[0].shape[1:]
    for a in arrs:
        if a.shape[1:] != first:
            raise ShapeError(f"stack_batch: {a.shape[1:]} vs {first}")
    return Tensor._wrap(np.concatenate(arrs, axis=0))

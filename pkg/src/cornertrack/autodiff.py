"""A small reverse-mode tape over the kernels used by the corner heads.

Operations are methods on :class:`Tape`. Each call evaluates the forward
kernel eagerly, appends a node holding the saved activations and a backward
rule, and returns that node. Because nodes are appended as they are created,
the node list is already in topological order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import correlation as _corr
from . import losses as _losses
from . import pooling as _pool
from .losses import ContractError
from .tensor import ShapeError, Tensor, conv2d_array, conv_windows, sigmoid_array

BackwardFn = Callable[[np.ndarray], Sequence[np.ndarray | None]]


class NumericError(ArithmeticError):
    """Raised when a checked function is not finite."""


class Node:
    __slots__ = ("id", "tape", "array", "inputs", "backward_fn", "is_param", "kind", "margin")

    def __init__(self, tape: "Tape", array: np.ndarray, inputs: tuple["Node", ...],
                 backward_fn: BackwardFn | None, kind: str, is_param: bool = False):
        self.id = len(tape.nodes)
        self.tape = tape
        self.array = array
        self.inputs = inputs
        self.backward_fn = backward_fn
        self.kind = kind
        self.is_param = is_param
        self.margin = np.inf

    @property
    def value(self) -> Tensor:
        a = self.array
        return Tensor._wrap(a.reshape(1, 1, 1, 1) if a.ndim == 0 else a.copy())

    @property
    def shape(self) -> tuple[int, ...]:
        return self.array.shape

    def item(self) -> float:
        if self.array.size != 1:
            raise ContractError(f"node {self.id} ({self.kind}) is not scalar")
        return float(self.array.reshape(()))

    def __repr__(self) -> str:
        return f"Node({self.id}, {self.kind}, shape={self.array.shape})"


def _unbroadcast_batch(grad: np.ndarray, batch: int) -> np.ndarray:
    if grad.shape[0] != batch:
        return grad.sum(axis=0, keepdims=True)
    return grad


class Tape:
    """Records operations for one forward pass and runs backward over them."""

    def __init__(self):
        self.nodes: list[Node] = []
        self._lifted: dict[int, Node] = {}

    # -- leaves ---------------------------------------------------------------

    def _push(self, array, inputs, backward_fn, kind, is_param=False) -> Node:
        node = Node(self, array, tuple(inputs), backward_fn, kind, is_param)
        self.nodes.append(node)
        return node

    def param(self, value: Tensor | np.ndarray) -> Node:
        """A leaf whose gradient is reported by :meth:`backward`."""
        arr = value.data if isinstance(value, Tensor) else np.asarray(value, dtype=np.float64)
        node = self._push(arr, (), None, "param", is_param=True)
        if isinstance(value, Tensor):
            self._lifted[id(value)] = node
        return node

    def constant(self, value: Tensor | np.ndarray | float) -> Node:
        arr = value.data if isinstance(value, Tensor) else np.asarray(value, dtype=np.float64)
        return self._push(arr, (), None, "const")

    def lift(self, x) -> Node:
        """Return ``x`` if it is a node, the param node registered for it, or a constant."""
        if isinstance(x, Node):
            if x.tape is not self:
                raise ContractError("node belongs to a different tape")
            return x
        if isinstance(x, Tensor) and id(x) in self._lifted:
            return self._lifted[id(x)]
        return self.constant(x)

    @property
    def params(self) -> list[Node]:
        return [n for n in self.nodes if n.is_param]

    # -- elementwise ----------------------------------------------------------

    def add(self, a, b) -> Node:
        a, b = self.lift(a), self.lift(b)
        if a.shape != b.shape:
            raise ShapeError(f"add: shapes differ, {a.shape} vs {b.shape}")
        return self._push(a.array + b.array, (a, b), lambda g: (g, g), "add")

    def mul(self, a, b) -> Node:
        a, b = self.lift(a), self.lift(b)
        if a.shape != b.shape:
            raise ShapeError(f"mul: shapes differ, {a.shape} vs {b.shape}")
        xa, xb = a.array, b.array
        return self._push(xa * xb, (a, b), lambda g: (g * xb, g * xa), "mul")

    def scale(self, a, factor: float) -> Node:
        a = self.lift(a)
        f = float(factor)
        return self._push(a.array * f, (a,), lambda g: (g * f,), "scale")

    def relu(self, x) -> Node:
        x = self.lift(x)
        arr = x.array
        mask = arr > 0
        # np.maximum keeps NaN visible, so divergence is reported rather than masked
        node = self._push(np.maximum(arr, 0.0), (x,), lambda g: (g * mask,), "relu")
        node.margin = float(np.min(np.abs(arr))) if arr.size else np.inf
        return node

    def sigmoid(self, x) -> Node:
        x = self.lift(x)
        out = sigmoid_array(x.array)
        return self._push(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")

    def sum(self, x) -> Node:
        x = self.lift(x)
        shape = x.shape
        return self._push(np.asarray(x.array.sum()), (x,),
                          lambda g: (np.broadcast_to(g, shape).copy(),), "sum")

    def add_scalars(self, *xs) -> Node:
        nodes = [self.lift(x) for x in xs]
        for n in nodes:
            if n.array.size != 1:
                raise ContractError("add_scalars expects scalar nodes")
        total = np.asarray(sum(float(n.array.reshape(())) for n in nodes))
        return self._push(total, nodes, lambda g: tuple(g for _ in nodes), "add_scalars")

    # -- structural -----------------------------------------------------------

    def conv2d(self, x, w, b=None, stride: int = 1, padding: int = 0) -> Node:
        x, w = self.lift(x), self.lift(w)
        xb = x.array
        wk = w.array
        if wk.shape[1] != xb.shape[1]:
            raise ShapeError(f"conv2d: kernel expects {wk.shape[1]} channels, input has {xb.shape[1]}")
        inputs = [x, w]
        bias = None
        if b is not None:
            b = self.lift(b)
            bias = b.array.reshape(-1)
            inputs.append(b)
        out = conv2d_array(xb, wk, bias, stride, padding)

        def backward(g):
            n, c, h, wd = xb.shape
            oc, _, kh, kw = wk.shape
            ho, wo = g.shape[2:]
            win = conv_windows(xb, kh, kw, stride, padding)
            gw = np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3]))  # (oc, c, kh, kw)
            cols = np.tensordot(g, wk, axes=([1], [0]))  # (n, ho, wo, c, kh, kw)
            cols = cols.transpose(0, 3, 1, 2, 4, 5)
            gx = np.zeros((n, c, h + 2 * padding, wd + 2 * padding))
            hs = stride * (ho - 1) + 1
            ws = stride * (wo - 1) + 1
            for i in range(kh):
                for j in range(kw):
                    gx[:, :, i:i + hs:stride, j:j + ws:stride] += cols[..., i, j]
            if padding:
                gx = gx[:, :, padding:padding + h, padding:padding + wd]
            grads = [gx, gw]
            if bias is not None:
                grads.append(g.sum(axis=(0, 2, 3)).reshape(b.array.shape))
            return grads

        return self._push(out, inputs, backward, "conv2d")

    def depthwise_correlate(self, template, search) -> Node:
        t, s = self.lift(template), self.lift(search)
        ta, sa = t.array, s.array
        if ta.shape[1] != sa.shape[1]:
            raise ShapeError(f"correlation: channels {ta.shape[1]} vs {sa.shape[1]}")
        if ta.shape[2] > sa.shape[2] or ta.shape[3] > sa.shape[3]:
            raise ShapeError("correlation: template larger than search")
        out = _corr.depthwise_correlate_array(ta, sa)

        def backward(g):
            kh, kw = ta.shape[2:]
            ho, wo = g.shape[2:]
            gt = np.zeros(np.broadcast_shapes(ta.shape[:2], sa.shape[:2]) + (kh, kw))
            gs = np.zeros_like(sa)
            for i in range(kh):
                for j in range(kw):
                    window = sa[:, :, i:i + ho, j:j + wo]
                    gt[:, :, i, j] = np.einsum("nchw,nchw->nc", g, window)
                    gs[:, :, i:i + ho, j:j + wo] += g * ta[:, :, i:i + 1, j:j + 1]
            return _unbroadcast_batch(gt, ta.shape[0]), gs

        return self._push(out, (t, s), backward, "correlate")

    def pool(self, x, direction: str) -> Node:
        x = self.lift(x)
        arr = x.array
        axis, _ = _pool.DIRECTIONS[direction]
        out = _pool.pool_array(arr, direction)
        src = _pool.pool_argmax_array(arr, direction)
        node = self._push(out, (x,), lambda g: (_pool.route_gradient(g, src, axis),), f"pool_{direction}")
        node.margin = _pool_margin(arr, direction)
        return node

    def center_crop(self, x, size: int) -> Node:
        x = self.lift(x)
        arr = x.array
        h, w = arr.shape[2:]
        if size > min(h, w):
            raise ShapeError(f"crop {size} larger than {h}x{w}")
        y0, x0 = (h - size) // 2, (w - size) // 2

        def backward(g):
            gx = np.zeros_like(arr)
            gx[:, :, y0:y0 + size, x0:x0 + size] = g
            return (gx,)

        return self._push(arr[:, :, y0:y0 + size, x0:x0 + size].copy(), (x,), backward, "crop")

    # -- losses ---------------------------------------------------------------

    def focal_loss(self, pred, target: Tensor | np.ndarray, alpha: float = 2.0, beta: float = 4.0,
                   k: int = 1) -> Node:
        if k < 1:
            raise ContractError(f"K must be >= 1, got {k}")
        pred = self.lift(pred)
        tgt = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=np.float64)
        if tgt.shape != pred.shape:
            raise ShapeError(f"focal_loss: {pred.shape} vs {tgt.shape}")
        value, grad = _losses.focal_loss_array(pred.array, tgt, alpha, beta, k)
        node = self._push(np.asarray(value), (pred,), lambda g: (g * grad,), "focal")
        p = pred.array
        node.margin = float(min(np.min(np.abs(p - _losses.CLAMP_EPS)),
                                np.min(np.abs(p - (1 - _losses.CLAMP_EPS)))))
        return node

    def gather(self, x, index: Sequence[tuple[int, int, int, int]]) -> Node:
        """Pick individual elements; returns a (len(index),) vector node."""
        x = self.lift(x)
        arr = x.array
        idx = tuple(np.asarray(col, dtype=np.intp) for col in zip(*index)) if len(index) else None
        if idx is None:
            raise ContractError("gather needs at least one index")

        def backward(g):
            gx = np.zeros_like(arr)
            np.add.at(gx, idx, g)
            return (gx,)

        return self._push(arr[idx].copy(), (x,), backward, "gather")

    def smooth_l1(self, pred, target, k: int) -> Node:
        """(1/k) * sum of elementwise smooth-L1 between ``pred`` and ``target``."""
        if k < 1:
            raise ContractError(f"K must be >= 1, got {k}")
        pred = self.lift(pred)
        tgt = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=np.float64)
        if tgt.shape != pred.shape:
            raise ContractError(f"smooth_l1: {pred.shape} vs {tgt.shape}")
        diff = pred.array - tgt
        value, d = _losses.smooth_l1_array(diff)
        node = self._push(np.asarray(value.sum() / k), (pred,), lambda g: (g * d / k,), "smooth_l1")
        node.margin = float(np.min(np.abs(np.abs(diff) - 1.0))) if diff.size else np.inf
        return node

    # -- backward -------------------------------------------------------------

    def backward(self, loss: Node) -> dict[Node, Tensor]:
        """Gradients of scalar ``loss`` with respect to every param leaf."""
        if loss.tape is not self:
            raise ContractError("loss node belongs to a different tape")
        if loss.array.size != 1:
            raise ContractError(f"loss must be scalar, got shape {loss.array.shape}")
        grads: dict[int, np.ndarray] = {loss.id: np.ones_like(loss.array)}
        for node in reversed(self.nodes[:loss.id + 1]):
            g = grads.pop(node.id, None) if not node.is_param else grads.get(node.id)
            if g is None or node.backward_fn is None:
                continue
            for inp, gi in zip(node.inputs, node.backward_fn(g)):
                if gi is None:
                    continue
                if inp.id in grads:
                    grads[inp.id] = grads[inp.id] + gi
                else:
                    grads[inp.id] = np.asarray(gi, dtype=np.float64).reshape(inp.array.shape)
        out = {}
        for p in self.params:
            g = grads.get(p.id)
            arr = np.zeros_like(p.array) if g is None else g
            out[p] = Tensor._wrap(np.array(arr, dtype=np.float64).reshape(_as4(arr.shape)))
        return out

    def kink_margin(self) -> float:
        """Smallest distance of any recorded input from a non-smooth point."""
        return min((n.margin for n in self.nodes), default=np.inf)


def _as4(shape: tuple[int, ...]) -> tuple[int, ...]:
    return (1,) * (4 - len(shape)) + tuple(shape) if len(shape) < 4 else shape


def _pool_margin(x: np.ndarray, direction: str) -> float:
    # gap between each new element and the running max it competes with
    axis, is_prefix = _pool.DIRECTIONS[direction]
    a = x if is_prefix else np.flip(x, axis=axis)
    n = a.shape[axis]
    if n < 2:
        return np.inf
    running = np.maximum.accumulate(a, axis=axis)
    prev = np.take(running, np.arange(n - 1), axis=axis)
    cur = np.take(a, np.arange(1, n), axis=axis)
    gap = np.abs(cur - prev)
    # exact zeros on both sides come from rectified inputs, whose own kink is checked
    benign = (cur == 0) & (prev == 0)
    gap = np.where(benign, np.inf, gap)
    return float(gap.min())


def backward(tape: Tape, loss_node: Node) -> dict[Node, Tensor]:
    return tape.backward(loss_node)


@dataclass
class GradientReport:
    max_abs_err: float
    max_rel_err: float
    worst: list[int] = field(default_factory=list)
    worst_param: int = 0

    def passed(self, tol: float) -> bool:
        return self.max_rel_err < tol


def grad_check(function: Callable[..., Node], point: Tensor | Sequence[Tensor], step: float = 1e-6,
               rel_floor: float = 1e-6) -> GradientReport:
    """Compare tape gradients of ``function`` with central differences.

    ``function`` receives one node per entry of ``point`` (all on the same
    tape) and must return a scalar node. The relative error of a coordinate
    is |analytic - numeric| / max(|analytic|, |numeric|, rel_floor).
    """
    if step <= 0:
        raise ValueError("step must be positive")
    points = [point] if isinstance(point, Tensor) else list(point)
    tape = Tape()
    nodes = [tape.param(p) for p in points]
    out = function(*nodes)
    base = out.item()
    if not np.isfinite(base):
        raise NumericError("function value is not finite at the check point")
    analytic = tape.backward(out)

    def evaluate(arrays):
        t = Tape()
        v = function(*[t.param(a) for a in arrays]).item()
        if not np.isfinite(v):
            raise NumericError("function value is not finite near the check point")
        return v

    arrays = [p.data.copy() for p in points]
    max_abs = 0.0
    max_rel = 0.0
    worst: list[int] = []
    worst_param = 0
    for pi, arr in enumerate(arrays):
        a = analytic[nodes[pi]].data.reshape(-1)
        flat = arr.reshape(-1)
        worst_i = 0
        worst_rel = -1.0
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            fp = evaluate(arrays)
            flat[i] = orig - step
            fm = evaluate(arrays)
            flat[i] = orig
            num = (fp - fm) / (2.0 * step)
            err = abs(a[i] - num)
            rel = err / max(abs(a[i]), abs(num), rel_floor)
            max_abs = max(max_abs, err)
            if rel > worst_rel:
                worst_rel, worst_i = rel, i
            if rel > max_rel:
                max_rel = rel
                worst_param = pi
        worst.append(worst_i)
    return GradientReport(max_abs_err=max_abs, max_rel_err=max_rel, worst=worst, worst_param=worst_param)

"""Reference checks shared by the self-test command and the test suite.

Brute-force pooling, finite-difference gradient cases with kink-avoiding
sampling, and planted-corner decode round trips.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .autodiff import GradientReport, Tape, grad_check
from .decoding import HeatmapBundle, decode_level, to_patch_coords
from .head import BOTTOM_RIGHT, HEAD_FIELDS, TOP_LEFT, CornerHeadParams, corner_head, init_head_params
from .losses import offset_target
from .pooling import DIRECTIONS
from .tensor import Tensor

GRAD_STEP = 1e-4
GRAD_TOL = 1e-5
MIN_MARGIN = 1e-3  # well above the finite-difference step


# --- pooling ------------------------------------------------------------------

def brute_force_pool(x: np.ndarray, direction: str) -> np.ndarray:
    """Segment maxima computed one output cell at a time."""
    axis, is_prefix = DIRECTIONS[direction]
    out = np.empty_like(x)
    n = x.shape[axis]
    for i in range(n):
        seg = np.arange(0, i + 1) if is_prefix else np.arange(i, n)
        src = np.take(x, seg, axis=axis).max(axis=axis)
        index = [slice(None)] * 4
        index[axis] = i
        out[tuple(index)] = src
    return out


# --- gradient cases -----------------------------------------------------------

def _kink_free(make_point, function, rng: np.random.Generator, tries: int = 200):
    """Resample until every kink on the recorded tape is MIN_MARGIN away."""
    for _ in range(tries):
        point = make_point(rng)
        tape = Tape()
        function(*[tape.param(p) for p in point])
        if tape.kink_margin() > MIN_MARGIN:
            return point
    raise RuntimeError("could not draw a kink-free sample")


def _run(function, make_point, rng) -> GradientReport:
    point = _kink_free(make_point, function, rng)
    return grad_check(function, point, step=GRAD_STEP)


def _t(rng, *shape, scale=1.0) -> Tensor:
    return Tensor._wrap(rng.uniform(-scale, scale, size=shape))


def case_conv2d(seed: int) -> GradientReport:
    rng = np.random.default_rng(seed)
    stride, padding = int(rng.integers(1, 3)), int(rng.integers(0, 2))
    proj = np.random.default_rng(seed + 1)
    out_shape = {}

    def f(x, w, b):
        y = x.tape.conv2d(x, w, b, stride=stride, padding=padding)
        out_shape.setdefault("r", proj.uniform(-1, 1, size=y.shape))
        return x.tape.sum(x.tape.mul(y, x.tape.constant(out_shape["r"])))

    return _run(f, lambda g: [_t(g, 2, 2, 5, 5), _t(g, 3, 2, 3, 3), _t(g, 1, 1, 1, 3)], rng)


def case_sigmoid(seed: int) -> GradientReport:
    rng = np.random.default_rng(seed)
    r = rng.uniform(-1, 1, size=(1, 2, 4, 4))

    def f(x):
        return x.tape.sum(x.tape.mul(x.tape.sigmoid(x), x.tape.constant(r)))

    return _run(f, lambda g: [_t(g, 1, 2, 4, 4, scale=4.0)], rng)


def case_pool(seed: int, direction: str) -> GradientReport:
    rng = np.random.default_rng(seed)
    r = rng.uniform(-1, 1, size=(2, 2, 5, 5))

    def f(x):
        return x.tape.sum(x.tape.mul(x.tape.pool(x, direction), x.tape.constant(r)))

    return _run(f, lambda g: [_t(g, 2, 2, 5, 5)], rng)


def case_corner_head(seed: int, which: str = TOP_LEFT, channels: int = 1, width: int = 2,
                     size: int = 4) -> GradientReport:
    """Gradients of a projected head output w.r.t. both inputs and every parameter."""
    rng = np.random.default_rng(seed)
    r_hm = rng.uniform(-1, 1, size=(1, 1, size, size))
    r_off = rng.uniform(-1, 1, size=(1, 2, size, size))

    def make(g):
        head = init_head_params(channels, width, g, heatmap_prior=0.0)
        # give every bias a random value so no rectifier sits exactly at zero
        tensors = [t if not name.endswith("_b") else _t(g, *t.shape, scale=0.5)
                   for name, t in zip(HEAD_FIELDS, head.tensors())]
        return [_t(g, 1, channels, size, size), _t(g, 1, channels, size, size), *tensors]

    def f(fa, fb, *ps):
        params = CornerHeadParams.from_tensors(ps)
        tape = fa.tape
        logits, offsets = corner_head(fa, fb, params, which, tape=tape)
        a = tape.sum(tape.mul(logits, tape.constant(r_hm)))
        b = tape.sum(tape.mul(offsets, tape.constant(r_off)))
        return tape.add_scalars(a, b)

    return _run(f, make, rng)


def case_focal(seed: int) -> GradientReport:
    rng = np.random.default_rng(seed)
    target = rng.uniform(0.0, 0.9, size=(1, 1, 5, 5))
    target[0, 0, rng.integers(5), rng.integers(5)] = 1.0

    def f(p):
        return p.tape.focal_loss(p, target, 2.0, 4.0, 1)

    return _run(f, lambda g: [Tensor._wrap(g.uniform(0.05, 0.95, size=(1, 1, 5, 5)))], rng)


def case_smooth_l1(seed: int) -> GradientReport:
    rng = np.random.default_rng(seed)
    target = rng.uniform(0.0, 1.0, size=(6,))

    def f(p):
        return p.tape.smooth_l1(p.tape.gather(p, [(0, c, i, 0) for i in range(3) for c in range(2)]), target, 3)

    return _run(f, lambda g: [_t(g, 1, 2, 3, 1, scale=3.0)], rng)


GRADIENT_CASES: dict[str, Callable[[int], GradientReport]] = {
    "conv2d": case_conv2d,
    "sigmoid": case_sigmoid,
    **{f"pool_{d}": (lambda seed, d=d: case_pool(seed, d)) for d in DIRECTIONS},
    # alternate corner types so 100 seeds cover both heads within the time budget
    "corner_head": lambda seed: case_corner_head(seed, (TOP_LEFT, BOTTOM_RIGHT)[seed % 2]),
    "focal_loss": case_focal,
    "smooth_l1": case_smooth_l1,
}


# --- decode round trip ------------------------------------------------------------

def planted_bundle(rng: np.random.Generator, grid: int = 16, stride: int = 8):
    """A bundle with one clear corner pair and the patch box it encodes."""
    while True:
        xt, yt = rng.uniform(0, grid * stride, size=2)
        xb, yb = rng.uniform(0, grid * stride, size=2)
        if xb > xt + stride and yb > yt + stride:
            break
    tl_hm = rng.uniform(0.0, 0.3, size=(1, 1, grid, grid))
    br_hm = rng.uniform(0.0, 0.3, size=(1, 1, grid, grid))
    tl_off = np.zeros((1, 2, grid, grid))
    br_off = np.zeros((1, 2, grid, grid))
    for hm, off, (x, y) in ((tl_hm, tl_off, (xt, yt)), (br_hm, br_off, (xb, yb))):
        cx, cy = int(x // stride), int(y // stride)
        hm[0, 0, cy, cx] = 0.99
        off[0, :, cy, cx] = offset_target(x, y, stride)
    bundle = HeatmapBundle(3, stride, Tensor._wrap(tl_hm), Tensor._wrap(br_hm),
                           Tensor._wrap(tl_off), Tensor._wrap(br_off))
    return bundle, np.array([xt, yt, xb, yb])


def decode_round_trip_error(seed: int, trials: int = 100) -> float:
    """Largest coordinate error over ``trials`` planted pairs, in patch pixels."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        bundle, truth = planted_bundle(rng)
        rows = to_patch_coords(decode_level(bundle, 15), bundle.stride).rows
        worst = max(worst, float(np.max(np.abs(rows[0, :4] - truth))))
    return worst


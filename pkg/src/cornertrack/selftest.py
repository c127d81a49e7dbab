"""Quick self-test: pooling, gradients, radius, decoding and metric oracles.

Each check returns (name, passed, detail). The pooling implementation is
injectable so a deliberately broken version can serve as a negative control.
"""

from __future__ import annotations

import time
from typing import Callable

import numpy as np

from .checks import GRAD_TOL, GRADIENT_CASES, brute_force_pool, decode_round_trip_error
from .evaluation import normalized_precision, precision, success_auc
from .losses import gaussian_radius, gaussian_radius_bruteforce
from .pooling import DIRECTIONS, pool_array

CheckResult = tuple[str, bool, str]


def check_pooling(pool_fn: Callable[[np.ndarray, str], np.ndarray] = pool_array,
                  trials: int = 100, seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    for k in range(trials):
        shape = tuple(int(v) for v in rng.integers(1, [4, 4, 12, 12], endpoint=True))
        # small integer range so ties are common
        x = rng.integers(-3, 4, size=shape).astype(np.float64)
        for d in DIRECTIONS:
            if not np.array_equal(pool_fn(x, d), brute_force_pool(x, d)):
                return "pooling", False, f"{d} differs from brute force on trial {k}, shape {shape}"
    return "pooling", True, f"{trials} tensors x {len(DIRECTIONS)} directions"


def check_gradients(seeds: int = 3) -> list[CheckResult]:
    out = []
    for name, case in GRADIENT_CASES.items():
        worst = max(case(s).max_rel_err for s in range(seeds))
        out.append((f"grad:{name}", worst < GRAD_TOL, f"max rel err {worst:.2e} over {seeds} seeds"))
    return out


def check_radius(limit: int = 40) -> CheckResult:
    if gaussian_radius(32, 32, 0.5) != 4:
        return "radius", False, "gaussian_radius(32, 32, 0.5) != 4"
    for w in range(1, limit + 1):
        for h in range(1, limit + 1):
            if gaussian_radius(w, h, 0.5) != gaussian_radius_bruteforce(w, h, 0.5):
                return "radius", False, f"mismatch at {w}x{h}"
    return "radius", True, f"all sizes up to {limit}x{limit}"


def check_decode(trials: int = 100) -> CheckResult:
    err = decode_round_trip_error(0, trials)
    return "decode", err <= 1e-9, f"max error {err:.1e} px over {trials} planted pairs"


def check_metrics() -> CheckResult:
    ok = (success_auc([0.6] * 4)[1] == 12 / 21
          and precision([10.0, 30.0])[1] == 0.5
          and abs(normalized_precision([0.25] * 3)[1] - 51 / 101) < 1e-12)
    return "metrics", ok, "success / precision / normalised precision spot values"


def run_selftest(pool_fn: Callable[[np.ndarray, str], np.ndarray] = pool_array,
                 grad_seeds: int = 3) -> list[CheckResult]:
    results = [check_pooling(pool_fn)]
    results += check_gradients(grad_seeds)
    results += [check_radius(), check_decode(), check_metrics()]
    return results


def format_table(results: list[CheckResult], elapsed: float | None = None) -> str:
    width = max(len(name) for name, _, _ in results)
    lines = [f"{name:<{width}}  {'PASS' if ok else 'FAIL'}  {detail}" for name, ok, detail in results]
    failed = sum(not ok for _, ok, _ in results)
    summary = f"{len(results) - failed}/{len(results)} checks passed"
    if elapsed is not None:
        summary += f" in {elapsed:.1f} s"
    return "\n".join(lines + [summary])


def main(pool_fn=pool_array) -> int:
    start = time.perf_counter()
    results = run_selftest(pool_fn)
    print(format_table(results, time.perf_counter() - start))
    return 0 if all(ok for _, ok, _ in results) else 1

"""Compare the compiled loss/gradient kernels against the numpy fallback.

Checks that both backends agree on the same inputs, then times the fused
loss+gradient call on batch shapes typical of client updates (small batches,
modest feature counts). Run from the repo root:

    python3 benchmarks/bench_kernels.py
"""

import time

import numpy as np

from fedsim import _kernels_py
from fedsim.rng import stream

try:
    from fedsim import _kernels
except ImportError:
    _kernels = None

REL_TOL = 1e-10

# (batch, features, classes, hidden); hidden 0 means the linear model
SHAPES = [
    (16, 32, 10, 0),
    (64, 32, 10, 0),
    (64, 128, 100, 0),
    (16, 32, 10, 64),
    (64, 32, 10, 64),
    (64, 128, 100, 256),
]


def _inputs(n, d, c, h, rng):
    X = rng.normal(size=(n, d))
    y = rng.integers(0, c, size=n)
    w = rng.uniform(0.5, 2.0, size=n)
    if h == 0:
        params = (rng.normal(scale=0.1, size=(d, c)), rng.normal(scale=0.1, size=c))
    else:
        params = (
            rng.normal(scale=0.1, size=(d, h)),
            rng.normal(scale=0.1, size=h),
            rng.normal(scale=0.1, size=(h, c)),
            rng.normal(scale=0.1, size=c),
        )
    return params, X, y, w


def _call(mod, params, X, y, w):
    if len(params) == 2:
        return mod.linear_loss_grad(*params, X, y, w, 1e-4)
    return mod.mlp_loss_grad(*params, X, y, w, 1e-4)


def _assert_agree(a, b, shape):
    for left, right in zip(a, b):
        left, right = np.asarray(left), np.asarray(right)
        denom = np.maximum(1.0, np.abs(left))
        worst = float(np.max(np.abs(left - right) / denom))
        if worst > REL_TOL:
            raise AssertionError(f"backends disagree on shape {shape}: rel err {worst:.3e}")


def _time(mod, params, X, y, w, repeats):
    best = float("inf")
    for _ in range(5):
        start = time.perf_counter()
        for _ in range(repeats):
            _call(mod, params, X, y, w)
        best = min(best, (time.perf_counter() - start) / repeats)
    return best


def main():
    if _kernels is None:
        print("compiled backend unavailable; nothing to compare")
        return
    rng = stream(0, "bench-kernels")
    print(f"{'shape (n,d,C,h)':>22} {'numpy':>12} {'cython':>12} {'speedup':>8}")
    for shape in SHAPES:
        params, X, y, w = _inputs(*shape, rng)
        _assert_agree(_call(_kernels_py, params, X, y, w), _call(_kernels, params, X, y, w), shape)
        repeats = 200 if shape[1] * shape[3] < 10000 else 50
        t_py = _time(_kernels_py, params, X, y, w, repeats)
        t_cy = _time(_kernels, params, X, y, w, repeats)
        print(f"{str(shape):>22} {t_py * 1e6:>10.1f}us {t_cy * 1e6:>10.1f}us {t_py / t_cy:>7.1f}x")
    print("backends agree within", REL_TOL)


if __name__ == "__main__":
    main()

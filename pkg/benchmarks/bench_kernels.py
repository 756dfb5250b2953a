"""Compare the compiled kernels with the numpy fallback.

Run with ``python3 benchmarks/bench_kernels.py``. Prints the best of
``--repeat`` wall-clock timings per kernel and backend, and the largest
absolute difference between the two outputs.
"""
import argparse
import time

import numpy as np

from stochavg import kernels


def _best(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t)
    return best, out


def advance_case(n_paths, n_steps, d, m, multiplicative, seed=0):
    rng = np.random.default_rng(seed)
    J = 2
    B = 2 * J + 1
    lam = np.linspace(1.0, 2.0, d)
    h = 0.005
    t = np.arange(n_steps) * h / 0.05
    w = np.concatenate([np.ones((n_steps, 1)), np.cos(np.outer(t, [1.0, 2**0.5])), np.sin(np.outer(t, [1.0, 2**0.5]))], 1)
    args = dict(
        decay=np.exp(-lam * h),
        phi=-np.expm1(-lam * h) / lam,
        wf=np.ascontiguousarray(w),
        bmat=0.05 * rng.standard_normal((B, d, d)),
        bvec=0.05 * rng.standard_normal((B, d)),
        wg=np.ascontiguousarray(w),
        gconst=0.05 * rng.standard_normal((B, d, m)),
        glin=0.01 * rng.standard_normal((B, d, m, d)) if multiplicative else np.zeros((0, d, m, d)),
        dw=np.sqrt(h) * rng.standard_normal((n_paths, n_steps, m)),
    )
    stride = 10
    slots = np.where(np.arange(1, n_steps + 1) % stride == 0, np.arange(1, n_steps + 1) // stride, -1).astype(np.int64)
    n_rec = n_steps // stride + 1

    def run(impl):
        x = np.zeros((n_paths, d))
        out = np.zeros((n_paths, n_rec, d))
        impl.advance(x, args["decay"], args["phi"], args["wf"], args["bmat"], args["bvec"], args["wg"],
                     args["gconst"], args["glin"], args["dw"], slots, out)
        return out

    return run


def cost_case(n, n_times, d, seed=0):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((n, n_times, d))
    b = rng.standard_normal((n, n_times, d))
    return lambda impl: impl.sup_sq_cost(a, b)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    try:
        fast = kernels.get_backend("cython")
    except ImportError:
        print("compiled kernels are not built; nothing to compare")
        return
    slow = kernels.get_backend("numpy")
    cases = [
        ("advance additive N=512 steps=2000 d=3 m=2", advance_case(512, 2000, 3, 2, False)),
        ("advance multiplicative N=512 steps=2000 d=3 m=2", advance_case(512, 2000, 3, 2, True)),
        ("advance multiplicative N=64 steps=2000 d=8 m=8", advance_case(64, 2000, 8, 8, True)),
        ("sup_sq_cost N=512 T=41 d=3", cost_case(512, 41, 3)),
        ("sup_sq_cost N=2000 T=41 d=2", cost_case(2000, 41, 2)),
    ]
    print(f"{'case':52s} {'cython [s]':>11s} {'numpy [s]':>11s} {'speedup':>8s} {'max |diff|':>11s}")
    for name, run in cases:
        tc, oc = _best(lambda: run(fast), args.repeat)
        tn, on = _best(lambda: run(slow), args.repeat)
        diff = float(np.max(np.abs(np.asarray(oc) - np.asarray(on))))
        print(f"{name:52s} {tc:11.4f} {tn:11.4f} {tn / tc:8.2f} {diff:11.2e}")


if __name__ == "__main__":
    main()

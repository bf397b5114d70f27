"""Compare the compiled kernels against the NumPy fallback.

Usage: python benchmarks/bench_kernels.py [--repeats N]

Times the batched forward pieces and the fused loss/gradient kernel on a
desk-scale case and on a realistic extractor-sized case, and checks that
both backends agree numerically.
"""

import argparse
import time

import numpy as np

from partmint.kernels import fallback

try:
    from partmint import _native as native
except ImportError:
    native = None


CASES = [
    ("desk 16x(7x7x16) p=4", dict(n=16, h=7, w=7, d=16, p=4)),
    ("extractor 8x(14x14x512) p=6", dict(n=8, h=14, w=14, d=512, p=6)),
]


def _timeit(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def run_case(name, n, h, w, d, p, repeats):
    rng = np.random.default_rng(0)
    feats = np.ascontiguousarray(rng.normal(size=(n, h, w, d)))
    kernels = np.ascontiguousarray(rng.normal(size=(p, d)) * 1.5)

    rows = []
    for label, impl in (("python", fallback), ("native", native)):
        if impl is None:
            continue
        scores = impl.conv_scores(feats, kernels)
        acts = impl.softmax2d(scores)
        rows.append(
            (
                label,
                _timeit(lambda: impl.conv_scores(feats, kernels), repeats),
                _timeit(lambda: impl.softmax2d(scores), repeats),
                _timeit(lambda: impl.box3x3(acts), repeats),
                _timeit(lambda: impl.loss_grad(feats, kernels, 0.2), repeats),
            )
        )

    print(f"\n{name}  (best of {repeats})")
    print(f"{'backend':>8} {'conv':>10} {'softmax':>10} {'box3x3':>10} {'loss_grad':>10}")
    for label, t_conv, t_soft, t_box, t_grad in rows:
        print(
            f"{label:>8} {t_conv * 1e3:>9.3f}ms {t_soft * 1e3:>9.3f}ms "
            f"{t_box * 1e3:>9.3f}ms {t_grad * 1e3:>9.3f}ms"
        )
    if len(rows) == 2:
        speedup = rows[0][4] / rows[1][4]
        print(f"native loss_grad speedup vs python: {speedup:.2f}x")

    if native is not None:
        l_py = fallback.loss_grad(feats, kernels, 0.2)
        l_c = native.loss_grad(feats, kernels, 0.2)
        err = np.abs(l_py[2] - l_c[2]).max() / max(np.abs(l_py[2]).max(), 1e-30)
        print(f"gradient agreement (max rel err): {err:.2e}")


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()
    if native is None:
        print("compiled extension not available; timing the fallback only")
    for name, dims in CASES:
        run_case(name, repeats=args.repeats, **dims)


if __name__ == "__main__":
    main()

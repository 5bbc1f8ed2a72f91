"""Compare the compiled and pure-NumPy likelihood kernels.

Times one log-likelihood + gradient evaluation at several sample sizes, then
a full fit on the N=5500 simulated table with each backend, and checks that
the backends agree.  Run with ``python benchmarks/bench_kernels.py``.
"""

import argparse
import time

import numpy as np

from ordtrans import _backend, _kernels_py
from ordtrans import estimation as est
from ordtrans import simulation as sim
from ordtrans.data import FeatureEncoder, build_contingency
from ordtrans.model import HyperParams, ModelParams, default_c, weight_matrix

try:
    from ordtrans import _kernels as _compiled
except ImportError:
    _compiled = None


def best_of(fn, repeats):
    times = []
    for _ in range(repeats):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def kernel_case(n, k=3, dim=6, seed=0):
    rng = np.random.default_rng(seed)
    X1 = np.column_stack([np.ones(n), rng.normal(size=(n, dim))])
    Y1 = np.column_stack([np.ones(n), rng.normal(size=(n, dim))])
    rows = rng.integers(0, k, n)
    cols = rng.integers(0, k - 1, n)  # no last-column outcomes, so every point is valid
    params = ModelParams(rng.normal(scale=0.2, size=(k, dim + 1)), rng.normal(scale=0.2, size=(k - 1, dim + 1)))
    return params, X1, Y1, rows, cols, weight_matrix(2.0, k)


def bench_kernels(sizes, repeats, backends):
    print(f"{'N':>8} " + " ".join(f"{name:>12}" for name in backends) + "   speedup")
    for n in sizes:
        p, X1, Y1, rows, cols, W = kernel_case(n)
        times = {}
        for name, mod in backends.items():
            times[name] = best_of(
                lambda: mod.loglik_grad(p.beta, p.delta, X1, Y1, rows, cols, W, 0.001), repeats
            )
        line = f"{n:>8} " + " ".join(f"{1e3 * t:>10.3f}ms" for t in times.values())
        if len(times) == 2:
            line += f"   {times['python'] / times['compiled']:.1f}x"
        print(line)


def bench_fit(backends, max_iter):
    ds = sim.generate(sim.k_table(3), seed=0)
    enc = FeatureEncoder.fit(ds)
    d = est.design(enc.transform(ds))
    hp = HyperParams(c_weight=default_c(build_contingency(ds)), max_iter=max_iter)
    fits = {}
    print(f"\nfit on the N={ds.n_obs} table (max_iter={max_iter})")
    for name, mod in backends.items():
        _backend.loglik_grad, _backend.probabilities = mod.loglik_grad, mod.probabilities
        t = time.perf_counter()
        rep = est.fit(d, hp)
        elapsed = time.perf_counter() - t
        fits[name] = rep
        print(f"  {name:>8}: {elapsed:7.2f}s, {rep.iterations} iterations, converged={rep.converged}, "
              f"loglik={rep.log_likelihood:.6f}")
    if len(fits) == 2:
        gap = np.abs(fits["python"].params.flat() - fits["compiled"].params.flat()).max()
        print(f"  max parameter difference between backends: {gap:.2e}")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", default="100,1000,5500,20000")
    ap.add_argument("--repeats", type=int, default=20)
    ap.add_argument("--max-iter", type=int, default=10000)
    ap.add_argument("--skip-fit", action="store_true")
    args = ap.parse_args()
    backends = {"python": _kernels_py}
    if _compiled is not None:
        backends["compiled"] = _compiled
    else:
        print("compiled kernels not built; timing the NumPy fallback only")
    print(f"default backend at import: {_backend.BACKEND}\n")
    bench_kernels([int(s) for s in args.sizes.split(",")], args.repeats, backends)
    if not args.skip_fit:
        bench_fit(backends, args.max_iter)


if __name__ == "__main__":
    main()

"""Compiled vs NumPy kernels: sparse-dense products and the simplex solver loop.

    python3 benchmarks/bench_kernels.py [--repeat 20] [--json out.json]
"""

import argparse
import json
import timeit

import numpy as np

from emrgnn import kernels
from emrgnn.coefficients import lipschitz_constant
from emrgnn.data import SbmSpec, generate_sbm
from emrgnn.graph import normalize


def best_of(fn, repeat):
    t = timeit.Timer(fn)
    number, _ = t.autorange()
    return min(t.repeat(repeat=repeat, number=number)) / number


def spmm_cases():
    for n, deg, d in [(600, 10, 64), (5000, 10, 64), (20000, 20, 32)]:
        p = deg / n
        ds = generate_sbm(SbmSpec(n=n, relations=((p, p),), feature_dim=4, seed=0))
        adj = normalize(ds.graph)[0].adj_norm
        Z = np.random.default_rng(0).normal(size=(n, d))
        yield f"spmm n={n} nnz={adj.nnz} d={d}", (adj.indptr, adj.indices, adj.data, Z)


def emda_cases():
    rng = np.random.default_rng(1)
    for R in (3, 8, 32):
        s = rng.uniform(0, 10, R)
        phi = lipschitz_constant(s, 1.0, 1.0)
        # tol=0 disables early stopping so every call runs all iterations
        yield f"emda R={R} iters=1000", (s, 1.0, phi, np.full(R, 1.0 / R), 1000, 0.0)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--repeat", type=int, default=7)
    ap.add_argument("--json", help="write results to this file")
    args = ap.parse_args(argv)

    backends = {"python": kernels.get_backend("python")}
    if kernels.HAVE_COMPILED:
        backends["compiled"] = kernels.get_backend("compiled")
    else:
        print("compiled kernels unavailable; timing the NumPy fallback only")

    rows = []
    for kernel, cases in (("csr_spmm", spmm_cases()), ("emda_loop", emda_cases())):
        for label, case_args in cases:
            times = {name: best_of(lambda m=mod: getattr(m, kernel)(*case_args), args.repeat)
                     for name, mod in backends.items()}
            rows.append({"case": label, **{f"{k}_ms": v * 1e3 for k, v in times.items()}})

    print(f"{'case':34s} {'python ms':>11s} {'compiled ms':>12s} {'speedup':>8s}")
    for r in rows:
        c = r.get("compiled_ms")
        print(f"{r['case']:34s} {r['python_ms']:11.3f} "
              + (f"{c:12.3f} {r['python_ms'] / c:7.1f}x" if c else f"{'-':>12s} {'-':>8s}"))
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2, sort_keys=True)


if __name__ == "__main__":
    main()

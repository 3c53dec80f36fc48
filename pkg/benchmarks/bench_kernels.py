"""Time the compiled and numpy backends of the hot kernels.

Usage: python3 benchmarks/bench_kernels.py [--repeat N] [--out results.csv]
"""

import argparse
import csv
import sys
import timeit

import numpy as np

from idsrl import _kernels


def projection_case(batch, atoms, rng):
    probs = rng.random((batch, atoms))
    probs /= probs.sum(axis=1, keepdims=True)
    rewards = rng.normal(size=batch)
    gammas = np.where(rng.random(batch) < 0.1, 0.0, 0.99)
    return rewards, gammas, probs


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--out", help="optional CSV of results")
    args = ap.parse_args(argv)

    backends = _kernels.backends()
    if "cython" not in backends:
        print("compiled backend not built; timing the numpy fallback only", file=sys.stderr)
    rng = np.random.default_rng(0)
    cases = []
    for batch, atoms in ((32, 51), (256, 51), (32, 201)):
        r, g, p = projection_case(batch, atoms, rng)
        cases.append((f"project_categorical B={batch} N={atoms}", 200,
                      lambda m, r=r, g=g, p=p: m.project_categorical(r, g, p, -10.0, 10.0)))
    for heads, actions in ((10, 2), (10, 18)):
        q = rng.normal(size=(heads, actions))
        var = rng.random(actions)
        cases.append((f"ids_scores K={heads} A={actions}", 5000,
                      lambda m, q=q, var=var: m.ids_scores(q, var, 0.1, 1e-5, 1e-5, 0.25, 0.0, m.RATIO, 0.0)))

    results = []
    print(f"{'kernel':<36} {'backend':<8} {'us/call':>10}")
    for name, number, fn in cases:
        for backend, mod in backends.items():
            best = min(timeit.repeat(lambda: fn(mod), number=number, repeat=args.repeat)) / number
            results.append(dict(kernel=name, backend=backend, us_per_call=best * 1e6))
            print(f"{name:<36} {backend:<8} {best * 1e6:>10.2f}")
        if len(backends) == 2:
            t = {r["backend"]: r["us_per_call"] for r in results if r["kernel"] == name}
            print(f"{'':<36} {'speedup':<8} {t['python'] / t['cython']:>9.1f}x")
    if args.out:
        with open(args.out, "w", newline="") as fh:
            fh.write("#schema=kernel_bench/v1\n")
            w = csv.DictWriter(fh, fieldnames=["kernel", "backend", "us_per_call"], lineterminator="\n")
            w.writeheader()
            w.writerows(results)


if __name__ == "__main__":
    main()

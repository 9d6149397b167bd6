"""Time the compiled and pure-Python scan kernels on the same workload.

    python benchmarks/bench_backends.py --n 1000 --p 100 --family linear
"""

import argparse
import time

import numpy as np

from twostage import backend
from twostage.scan import ScanConfig, _Prepared
from twostage.simulate import PhenotypeSpec, make_rng, simulate_genotypes_independent, simulate_phenotype

FAMILIES = ("linear", "logistic", "poisson", "cox")


def workload(family, n, p, covariates, seed):
    geno = simulate_genotypes_independent(n, p, rng=make_rng(seed, 0, 1))
    y = simulate_phenotype(geno, PhenotypeSpec(family=family), make_rng(seed, 0, 2))
    fixed = make_rng(seed, 0, 3).normal(size=(n, covariates)) if covariates else None
    prep = _Prepared(geno, y, ScanConfig(family=family, fixed_covariates=fixed))
    k, l = np.triu_indices(p, 1)
    return prep, np.column_stack([k, l])


def best_of(fn, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--family", choices=FAMILIES + ("all",), default="all")
    ap.add_argument("--n", type=int, default=1000)
    ap.add_argument("--p", type=int, default=60)
    ap.add_argument("--covariates", type=int, default=0)
    ap.add_argument("--repeats", type=int, default=3)
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args(argv)
    names = backend.available()
    families = FAMILIES if args.family == "all" else (args.family,)
    print(f"n={args.n} p={args.p} covariates={args.covariates} backends={','.join(names)}")
    print(f"{'family':<10}{'pairs':>8}" + "".join(f"{nm + ' s':>14}" for nm in names) + f"{'speedup':>10}{'max diff':>12}")
    for fam in families:
        prep, items = workload(fam, args.n, args.p, args.covariates, args.seed)
        secs, outs = [], []
        for nm in names:
            s, out = best_of(lambda: prep.fit_items(items, True, kernel=backend.get(nm)), args.repeats)
            secs.append(s)
            outs.append(out[0])
        line = f"{fam:<10}{len(items):>8}" + "".join(f"{s:>14.4f}" for s in secs)
        if len(names) == 2:
            diff = np.nanmax(np.abs(outs[0] - outs[1]))
            line += f"{secs[1] / secs[0]:>9.1f}x{diff:>12.1e}"
        print(line)


if __name__ == "__main__":
    main()

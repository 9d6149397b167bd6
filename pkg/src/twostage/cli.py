"""Command-line interface: ``twostage {scan,simulate,fwer,power,independence,marginal}``.

Settings are resolved as built-in defaults, then ``--config`` (TOML), then
explicit flags.  Exit status: 0 success, 1 internal or numerical failure,
2 invalid input.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import experiments as ex
from . import io
from .errors import ConfigError, InvalidInput, TwoStageError
from .glm import Family
from .scan import QualityConfig, ScanConfig, outcome_length, run_two_stage
from .simulate import (
    PhenotypeSpec,
    make_rng,
    simulate_genotypes_correlated,
    simulate_genotypes_independent,
    simulate_phenotype,
)

EXIT_OK, EXIT_INTERNAL, EXIT_INPUT = 0, 1, 2

SCAN_DEFAULTS = {
    "family": "linear",
    "alpha": 0.05,
    "fst": 0.05,
    "fst_file": None,
    "k1_mode": "observed",
    "r2_max": 0.9,
    "min_variance": 1e-8,
    "min_maf": 0.0,
    "standardize": False,
    "threads": 1,
    "covariates": None,
}

SIM_DEFAULTS = {
    "family": "linear",
    "n": 500,
    "p": 200,
    "seed": None,
    "setting": "independent",
    "block_rho": 0.7,
    "causal": False,
    "beta1": 0.0,
    "beta2": 0.0,
    "beta3": 0.0,
}

_EXP_FIELDS = ex.ExperimentConfig.__dataclass_fields__
EXP_DEFAULTS = {
    k: (_EXP_FIELDS[k].default if k not in ("beta3", "marginal_grid") else _EXP_FIELDS[k].default_factory())
    for k in ("family", "n", "p", "replicates", "first_replicate", "alpha", "fst", "k1_mode", "r2_max",
              "min_variance", "min_maf", "setting", "block_rho", "beta3", "main_effects",
              "marginal_grid", "marginal_maf", "threads")
}
EXP_DEFAULTS["family"] = "linear"
EXP_DEFAULTS["seed"] = None
EXP_DEFAULTS["progress"] = False

# per-command default overrides
_COMMAND_DEFAULTS = {
    "fwer": {},
    "power": {"n": 1000, "replicates": 200, "fst": (1.0, 0.1, 0.05, 0.01, 0.005)},
    "independence": {"n": 1000, "replicates": 2000},
    "marginal": {"n": 2000},
}


def _floats(text):
    try:
        vals = tuple(float(v) for v in str(text).split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _grid_arg(text):
    """``start:stop:step`` or a comma-separated list."""
    if ":" in text:
        try:
            start, stop, step = (float(v) for v in text.split(":"))
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad grid {text!r}, expected start:stop:step") from None
        if step <= 0 or stop < start:
            raise argparse.ArgumentTypeError(f"bad grid {text!r}")
        return ex._grid(start, stop, step)
    return _floats(text)


def _common(parser, experiment=False):
    parser.add_argument("--config", help="TOML file with settings (flags take precedence)")
    parser.add_argument("--family", choices=[f.value for f in Family])
    parser.add_argument("--alpha", type=float, help="global FWER level")
    parser.add_argument("--k1-mode", dest="k1_mode", choices=["observed", "deterministic"])
    parser.add_argument("--r2-max", dest="r2_max", type=float)
    parser.add_argument("--min-variance", dest="min_variance", type=float)
    parser.add_argument("--min-maf", dest="min_maf", type=float)
    parser.add_argument("--threads", type=int)
    if experiment:
        parser.add_argument("--seed", type=int, help="master seed (required)")
        parser.add_argument("--fst", type=_floats, help="comma-separated stage-1 thresholds")
        parser.add_argument("--n", type=int)
        parser.add_argument("--p", type=int)
        parser.add_argument("--replicates", type=int)
        parser.add_argument("--first-replicate", dest="first_replicate", type=int)
        parser.add_argument("--setting", choices=["independent", "correlated"])
        parser.add_argument("--block-rho", dest="block_rho", type=float)
        parser.add_argument("--progress", action="store_true", default=None,
                            help="print a replicate counter on stderr")
        parser.add_argument("--out", help="output CSV (default: stdout)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="twostage", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    scan = sub.add_parser("scan", help="two-stage interaction scan of a genotype/phenotype pair")
    scan.add_argument("genotypes", help="genotype CSV (header of marker names, rows of 0/1/2)")
    scan.add_argument("phenotype", help="phenotype CSV (y | y,offset | time,event)")
    scan.add_argument("--covariates", help="fixed-covariate CSV, row-aligned")
    scan.add_argument("--fst", help="stage-1 threshold, or a CSV of per-marker thresholds")
    scan.add_argument("--standardize", action="store_true", default=None)
    scan.add_argument("--out-dir", dest="out_dir", default=".", help="where screen.csv and pairs.csv go")
    _common(scan)

    sim = sub.add_parser("simulate", help="write simulated genotype and phenotype files")
    sim.add_argument("--config")
    sim.add_argument("--family", choices=[f.value for f in Family])
    sim.add_argument("--n", type=int)
    sim.add_argument("--p", type=int)
    sim.add_argument("--seed", type=int, help="master seed (required)")
    sim.add_argument("--setting", choices=["independent", "correlated"])
    sim.add_argument("--block-rho", dest="block_rho", type=float)
    sim.add_argument("--causal", action="store_true", default=None,
                     help="columns 0 and 1 are the causal pair")
    sim.add_argument("--beta1", type=float)
    sim.add_argument("--beta2", type=float)
    sim.add_argument("--beta3", type=float)
    sim.add_argument("--out-dir", dest="out_dir", default=".")

    fwer = sub.add_parser("fwer", help="family-wise error rate under the full null")
    _common(fwer, experiment=True)

    power = sub.add_parser("power", help="power of detecting the causal pair")
    _common(power, experiment=True)
    power.add_argument("--beta3", type=_grid_arg, help="start:stop:step or comma list")
    power.add_argument("--main-effects", dest="main_effects", choices=sorted(ex.MAIN_EFFECTS))

    ind = sub.add_parser("independence", help="correlation of stage-1 and stage-2 statistics")
    _common(ind, experiment=True)

    marg = sub.add_parser("marginal", help="stage-1 z against the interaction effect")
    _common(marg, experiment=True)
    marg.add_argument("--grid", dest="marginal_grid", type=_grid_arg, help="start:stop:step or comma list")
    marg.add_argument("--maf", dest="marginal_maf", type=float)
    return parser


def _resolve(args, defaults):
    settings = dict(defaults)
    if getattr(args, "config", None):
        settings.update(io.load_config(args.config, set(defaults)))
    for key in defaults:
        val = getattr(args, key, None)
        if val is not None:
            settings[key] = val
    return settings


def _require_seed(settings):
    seed = settings.get("seed")
    if seed is None:
        raise ConfigError("--seed is required (no implicit seeding)")
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ConfigError(f"seed must be an integer, got {seed!r}")
    return seed


def cmd_scan(args) -> int:
    s = _resolve(args, SCAN_DEFAULTS)
    geno = io.read_genotypes(args.genotypes)
    outcome = io.read_phenotype(args.phenotype, s["family"])
    if outcome_length(outcome) != geno.n:
        raise io.AlignmentError(f"{args.phenotype}: {outcome_length(outcome)} rows, genotypes have {geno.n}")
    fixed = io.read_covariates(s["covariates"], geno.n) if s["covariates"] else None
    fst = s["fst"]
    if isinstance(fst, str):
        try:
            fst = float(fst)
        except ValueError:
            fst = io.read_thresholds(fst, geno.names)
    elif s["fst_file"]:
        fst = io.read_thresholds(s["fst_file"], geno.names)
    try:
        config = ScanConfig(
            family=s["family"], alpha=float(s["alpha"]), stage1_threshold=fst, fixed_covariates=fixed,
            quality=QualityConfig(r2_max=float(s["r2_max"]), min_variance=float(s["min_variance"]),
                                  min_maf=float(s["min_maf"])),
            k1_mode=s["k1_mode"], standardize=bool(s["standardize"]), threads=int(s["threads"]))
    except (TypeError, ValueError) as exc:
        if isinstance(exc, InvalidInput):
            raise
        raise ConfigError(f"invalid setting: {exc}") from None
    report = run_two_stage(geno, outcome, config)
    os.makedirs(args.out_dir, exist_ok=True)
    io.write_screen(os.path.join(args.out_dir, "screen.csv"), report.screen, geno.names)
    io.write_pairs(os.path.join(args.out_dir, "pairs.csv"), report)
    print(f"K={report.screen.selected.size} K1={report.k1} K1_effective={report.k1_effective} "
          f"alpha2={io.fmt(report.alpha2)} any_rejection={io.fmt(report.any_rejection)}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    s = _resolve(args, SIM_DEFAULTS)
    seed = _require_seed(s)
    n, p = int(s["n"]), int(s["p"])
    causal = bool(s["causal"])
    geno_rng = make_rng(seed, 0, 1)
    if s["setting"] == "independent":
        geno = simulate_genotypes_independent(n, p, causal_count=2 if causal else 0, rng=geno_rng)
    elif s["setting"] == "correlated":
        geno = simulate_genotypes_correlated(n, p, block_rho=float(s["block_rho"]), causal=causal, rng=geno_rng)
    else:
        raise ConfigError(f"unknown setting {s['setting']!r}")
    if not causal and any(float(s[b]) != 0.0 for b in ("beta1", "beta2", "beta3")):
        raise ConfigError("non-zero effects need --causal")
    spec = PhenotypeSpec(family=s["family"], beta1=float(s["beta1"]), beta2=float(s["beta2"]),
                         beta3=float(s["beta3"]), causal=(0, 1))
    eta = None if causal else np.zeros(n)
    outcome = simulate_phenotype(geno, spec, make_rng(seed, 0, 2), eta=eta)
    os.makedirs(args.out_dir, exist_ok=True)
    io.write_genotypes(os.path.join(args.out_dir, "genotypes.csv"), geno)
    io.write_phenotype(os.path.join(args.out_dir, "phenotype.csv"), outcome)
    print(f"seed={seed} n={n} p={p} family={spec.family.value} out={args.out_dir}")
    return EXIT_OK


def _experiment_config(args) -> ex.ExperimentConfig:
    defaults = dict(EXP_DEFAULTS)
    defaults.update(_COMMAND_DEFAULTS[args.command])
    s = _resolve(args, defaults)
    _require_seed(s)
    try:
        return ex.ExperimentConfig(**s)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, (ConfigError, InvalidInput)):
            raise
        raise ConfigError(f"invalid setting: {exc}") from None


_RUNNERS = {
    "fwer": ex.estimate_fwer,
    "power": ex.power_curve,
    "independence": ex.independence_check,
    "marginal": ex.marginal_scan_study,
}


def cmd_experiment(args) -> int:
    config = _experiment_config(args)
    report = _RUNNERS[args.command](config)
    if args.out:
        io.write_table(args.out, report.columns, report.rows)
    else:
        io.write_table(sys.stdout, report.columns, report.rows)
    if args.command == "marginal":
        print(f"spearman_positive={io.fmt(report.config['spearman_positive'])}", file=sys.stderr)
    return EXIT_OK


_COMMANDS = {"scan": cmd_scan, "simulate": cmd_simulate, "fwer": cmd_experiment, "power": cmd_experiment,
             "independence": cmd_experiment, "marginal": cmd_experiment}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (InvalidInput, ConfigError, OSError) as exc:
        print(f"twostage {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except TwoStageError as exc:
        print(f"twostage {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except Exception as exc:  # noqa: BLE001
        print(f"twostage {args.command}: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())

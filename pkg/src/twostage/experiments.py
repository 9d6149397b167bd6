"""Monte-Carlo harnesses: FWER, power curves, stage independence and the
marginal-screening scatter.

Each replicate draws its data from streams keyed by its own index, and
results are reduced in replicate order, so reports do not depend on the
worker count and disjoint replicate ranges can be pooled.
"""

from __future__ import annotations

import dataclasses
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .errors import ConfigError
from .glm import DEFAULT_CONTROL, Family
from .scan import (
    GenotypeMatrix,
    QualityConfig,
    ScanConfig,
    _Prepared,
    _screen,
    _pairs_report,
)
from .simulate import (
    PhenotypeSpec,
    make_rng,
    simulate_genotypes_correlated,
    simulate_genotypes_independent,
    simulate_phenotype,
)

__all__ = [
    "ExperimentConfig",
    "ExperimentReport",
    "MAIN_EFFECTS",
    "estimate_fwer",
    "power_curve",
    "independence_check",
    "marginal_scan_study",
    "pool",
]

MAIN_EFFECTS = {"none": 0.0, "both": 0.5, "opposite": -0.5}

# sub-stream tags
_GENO, _PHENO, _FIXED_GENO = 1, 2, 3


def _grid(start, stop, step):
    k = int(round((stop - start) / step))
    return tuple(round(start + i * step, 10) for i in range(k + 1))


@dataclass(frozen=True)
class ExperimentConfig:
    family: Family = Family.LINEAR
    n: int = 500
    p: int = 200
    replicates: int = 500
    seed: int = 0
    first_replicate: int = 0
    alpha: float = 0.05
    fst: tuple = (0.05, 0.01)
    k1_mode: str = "observed"
    r2_max: float = 0.9
    min_variance: float = 1e-8
    min_maf: float = 0.0
    setting: str = "independent"
    block_rho: float = 0.7
    beta3: tuple = field(default_factory=lambda: _grid(0.0, 1.0, 0.05))
    main_effects: str = "none"
    marginal_grid: tuple = field(default_factory=lambda: _grid(-1.0, 1.0, 0.002))
    marginal_maf: float = 0.3
    threads: int = 1
    progress: bool = False

    def __post_init__(self):
        try:
            object.__setattr__(self, "family", Family.parse(self.family))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        for name in ("fst", "beta3", "marginal_grid"):
            v = getattr(self, name)
            v = (float(v),) if np.ndim(v) == 0 else tuple(float(x) for x in v)
            if not v:
                raise ConfigError(f"{name} grid must not be empty")
            object.__setattr__(self, name, v)
        if self.replicates < 1:
            raise ConfigError("replicates must be at least 1")
        if self.n < 2 or self.p < 1:
            raise ConfigError("need n >= 2 and p >= 1")
        if self.first_replicate < 0:
            raise ConfigError("first_replicate must be non-negative")
        if self.setting not in ("independent", "correlated"):
            raise ConfigError("setting must be 'independent' or 'correlated'")
        if self.main_effects not in MAIN_EFFECTS:
            raise ConfigError(f"main_effects must be one of {sorted(MAIN_EFFECTS)}")
        if any(not 0.0 < f <= 1.0 for f in self.fst):
            raise ConfigError("first-stage thresholds must lie in (0, 1]")
        if not 0.0 < self.alpha <= 1.0:
            raise ConfigError("alpha must lie in (0, 1]")
        if self.threads < 1:
            raise ConfigError("threads must be at least 1")
        try:
            self.quality()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def quality(self) -> QualityConfig:
        return QualityConfig(r2_max=self.r2_max, min_variance=self.min_variance, min_maf=self.min_maf)

    def scan_config(self, fst=1.0, standardize=False) -> ScanConfig:
        return ScanConfig(family=self.family, alpha=self.alpha, stage1_threshold=fst,
                          quality=self.quality(), k1_mode=self.k1_mode, standardize=standardize,
                          control=DEFAULT_CONTROL, threads=1)

    def replicate_ids(self) -> range:
        return range(self.first_replicate, self.first_replicate + self.replicates)

    def echo(self) -> dict:
        d = dataclasses.asdict(self)
        d["family"] = self.family.value
        return d


@dataclass(frozen=True, eq=False)
class ExperimentReport:
    """Tabular result: one row per cell with named columns."""

    kind: str
    columns: tuple
    rows: list
    config: dict
    replicate_ids: tuple = ()

    def column(self, name) -> np.ndarray:
        j = self.columns.index(name)
        return np.array([r[j] for r in self.rows])

    def where(self, **match) -> list:
        idx = [self.columns.index(k) for k in match]
        return [r for r in self.rows if all(r[j] == v for j, v in zip(idx, match.values()))]


def _binomial_row(count, reps):
    est = count / reps
    return est, math.sqrt(est * (1.0 - est) / reps)


def _map_replicates(fn, ids, threads, progress=False, label=""):
    """Apply ``fn`` to each replicate id; results come back in id order."""
    ids = list(ids)
    total = len(ids)

    def tick(i):
        if progress and (i + 1) % max(1, total // 20) == 0:
            print(f"{label} replicate {i + 1}/{total}", file=sys.stderr)

    if threads <= 1:
        out = []
        for i, r in enumerate(ids):
            out.append(fn(r))
            tick(i)
        return out
    with ThreadPoolExecutor(max_workers=threads) as pool:
        out = []
        for i, res in enumerate(pool.map(fn, ids)):
            out.append(res)
            tick(i)
        return out


def _null_spec(config):
    return PhenotypeSpec(family=config.family)


def _genotypes(config, replicate, causal):
    """Per-replicate independent markers, or one fixed correlated panel."""
    if config.setting == "independent":
        rng = make_rng(config.seed, replicate, _GENO)
        return simulate_genotypes_independent(config.n, config.p, causal_count=2 if causal else 0, rng=rng)
    return _fixed_panel(config.seed, config.n, config.p, config.block_rho, causal)


_PANEL_CACHE: dict = {}


def _fixed_panel(seed, n, p, rho, causal):
    key = (seed, n, p, rho, causal)
    geno = _PANEL_CACHE.get(key)
    if geno is None:
        rng = make_rng(seed, 0, _FIXED_GENO)
        geno = simulate_genotypes_correlated(n, p, block_rho=rho, causal=causal, rng=rng)
        if len(_PANEL_CACHE) > 8:
            _PANEL_CACHE.clear()
        _PANEL_CACHE[key] = geno
    return geno


def _fwer_replicate(config: ExperimentConfig, replicate: int):
    geno = _genotypes(config, replicate, causal=False)
    outcome = simulate_phenotype(geno, _null_spec(config), make_rng(config.seed, replicate, _PHENO))
    prep = _Prepared(geno, outcome, config.scan_config())
    base = _screen(prep, np.ones(geno.p))
    hits = []
    for f in config.fst:
        screen = base.rethreshold(f)
        rep = _pairs_report(prep, screen.selected, screen, screen.threshold)
        hits.append((rep.any_rejection, rep.k1))
    return hits


def estimate_fwer(config: ExperimentConfig) -> ExperimentReport:
    """Fraction of full-null replicates with at least one stage-2 rejection, per threshold."""
    res = _map_replicates(lambda r: _fwer_replicate(config, r), config.replicate_ids(),
                          config.threads, config.progress, "fwer")
    rows = []
    reps = config.replicates
    for j, f in enumerate(config.fst):
        count = sum(int(r[j][0]) for r in res)
        total_k1 = sum(r[j][1] for r in res)
        est, se = _binomial_row(count, reps)
        rows.append((config.family.value, config.setting, f, est, se, count, reps, total_k1, config.seed))
    return ExperimentReport("fwer", ("family", "setting", "fst", "estimate", "se", "rejections",
                                     "replicates", "total_k1", "seed"),
                            rows, config.echo(), tuple(config.replicate_ids()))


def _power_replicate(config: ExperimentConfig, replicate: int):
    geno = _genotypes(config, replicate, causal=True)
    main = MAIN_EFFECTS[config.main_effects]
    out = []
    for b3 in config.beta3:
        spec = PhenotypeSpec(family=config.family, beta1=main, beta2=main, beta3=b3)
        # common random numbers: the same stream for every grid point
        outcome = simulate_phenotype(geno, spec, make_rng(config.seed, replicate, _PHENO))
        prep = _Prepared(geno, outcome, config.scan_config())
        base = _screen(prep, np.ones(geno.p))
        row = []
        for f in config.fst:
            screen = base.rethreshold(f)
            rep = _pairs_report(prep, screen.selected, screen, screen.threshold)
            i = rep.pair(0, 1)
            row.append(bool(i is not None and rep.significant[i]))
        out.append(row)
    return out


def power_curve(config: ExperimentConfig) -> ExperimentReport:
    """Fraction of replicates in which the causal pair (0, 1) is significant."""
    res = _map_replicates(lambda r: _power_replicate(config, r), config.replicate_ids(),
                          config.threads, config.progress, "power")
    rows = []
    reps = config.replicates
    for j, f in enumerate(config.fst):
        for i, b3 in enumerate(config.beta3):
            count = sum(int(r[i][j]) for r in res)
            est, se = _binomial_row(count, reps)
            rows.append((f, b3, est, se, count, reps, config.main_effects, config.setting,
                         config.family.value, config.seed))
    return ExperimentReport("power", ("fst", "beta3", "power", "se", "hits", "replicates",
                                      "main_effects", "setting", "family", "seed"),
                            rows, config.echo(), tuple(config.replicate_ids()))


_IND_ITEMS = np.array([[0, -1], [1, -1], [1, 2]], dtype=np.int64)
_IND_LABELS = ("T1_j", "T1_k", "T2_kl")


def _independence_replicate(config: ExperimentConfig, replicate: int):
    geno = simulate_genotypes_independent(config.n, 3, rng=make_rng(config.seed, replicate, _GENO))
    outcome = simulate_phenotype(geno, _null_spec(config), make_rng(config.seed, replicate, _PHENO))
    prep = _Prepared(geno, outcome, config.scan_config(standardize=True))
    est, se, status = prep.fit_items(_IND_ITEMS, check_quality=False)
    if np.any(status != 0):
        return None
    return est / se


def independence_check(config: ExperimentConfig) -> ExperimentReport:
    """Correlations between stage-1 and stage-2 Wald statistics under the full null.

    Markers j=0, k=1, l=2 are standardized.  Rows: corr(T1_k, T2_kl) for a
    marker inside the pair, corr(T1_j, T2_kl) for one outside it, and
    corr(T1_j, T1_k).  Mardia's multivariate kurtosis of the three
    statistics is reported as a joint-normality diagnostic.
    """
    res = _map_replicates(lambda r: _independence_replicate(config, r), config.replicate_ids(),
                          config.threads, config.progress, "independence")
    t = np.array([r for r in res if r is not None])
    used = t.shape[0]
    corr = np.corrcoef(t, rowvar=False) if used > 2 else np.full((3, 3), np.nan)
    bound = 3.0 / math.sqrt(used) if used else math.nan
    kurt, kurt_z = _mardia_kurtosis(t) if used > 3 else (math.nan, math.nan)
    rows = []
    for a, b, kind in ((1, 2, "pairwise"), (0, 2, "mixed"), (0, 1, "stage1")):
        rows.append((config.family.value, kind, _IND_LABELS[a], _IND_LABELS[b], corr[a, b], bound,
                     used, kurt, kurt_z, config.seed))
    return ExperimentReport("independence", ("family", "relation", "stat_a", "stat_b", "corr",
                                             "bound", "replicates", "mardia_kurtosis",
                                             "mardia_z", "seed"),
                            rows, config.echo(), tuple(config.replicate_ids()))


def _mardia_kurtosis(t):
    n, d = t.shape
    c = t - t.mean(axis=0)
    s = c.T @ c / n
    m = np.einsum("ij,jk,ik->i", c, np.linalg.inv(s), c)
    b2 = float(np.mean(m * m))
    z = (b2 - d * (d + 2)) / math.sqrt(8.0 * d * (d + 2) / n)
    return b2, z


def _marginal_point(config: ExperimentConfig, i: int, beta: float):
    rng = make_rng(config.seed, i, _GENO)
    maf = config.marginal_maf
    geno = simulate_genotypes_independent(config.n, 2, maf_low=maf, maf_high=maf, rng=rng)
    spec = PhenotypeSpec(family=config.family, beta3=beta)
    outcome = simulate_phenotype(geno, spec, make_rng(config.seed, i, _PHENO))
    prep = _Prepared(geno, outcome, config.scan_config())
    est, se, status = prep.fit_items(np.array([[0, -1]]), check_quality=False)
    return float(est[0] / se[0]) if status[0] == 0 else math.nan


def marginal_scan_study(config: ExperimentConfig) -> ExperimentReport:
    """Stage-1 Wald z of x1 for interaction-only data across the beta grid.

    Grid point i uses replicate stream i (offset by ``first_replicate``).
    Spearman's rho of beta against |z| over the positive half of the grid
    is stored in ``config['spearman_positive']``.
    """
    grid = config.marginal_grid
    ids = range(config.first_replicate, config.first_replicate + len(grid))
    zs = _map_replicates(lambda i: _marginal_point(config, i, grid[i - config.first_replicate]),
                         ids, config.threads, config.progress, "marginal")
    rows = [(config.family.value, b, z, config.seed) for b, z in zip(grid, zs)]
    echo = config.echo()
    echo["spearman_positive"] = spearman_positive(np.array(grid), np.array(zs))
    return ExperimentReport("marginal", ("family", "beta3", "z", "seed"), rows, echo, tuple(ids))


def spearman_positive(beta, z) -> float:
    keep = (beta > 0) & np.isfinite(z)
    if keep.sum() < 3:
        return math.nan
    return float(stats.spearmanr(beta[keep], np.abs(z[keep])).statistic)


def pool(reports) -> ExperimentReport:
    """Combine FWER or power reports run on disjoint replicate ranges."""
    reports = list(reports)
    if not reports:
        raise ConfigError("nothing to pool")
    first = reports[0]
    if first.kind not in ("fwer", "power"):
        raise ConfigError(f"cannot pool {first.kind} reports")
    ids = [i for r in reports for i in r.replicate_ids]
    if len(set(ids)) != len(ids):
        raise ConfigError("replicate ranges overlap")
    cols = first.columns
    cnt = cols.index("rejections" if first.kind == "fwer" else "hits")
    rep = cols.index("replicates")
    est = cols.index("estimate" if first.kind == "fwer" else "power")
    se = cols.index("se")
    rows = []
    for i, row in enumerate(first.rows):
        count = sum(r.rows[i][cnt] for r in reports)
        reps = sum(r.rows[i][rep] for r in reports)
        new = list(row)
        new[cnt], new[rep] = count, reps
        new[est], new[se] = _binomial_row(count, reps)
        if first.kind == "fwer":
            k1 = cols.index("total_k1")
            new[k1] = sum(r.rows[i][k1] for r in reports)
        rows.append(tuple(new))
    config = dict(first.config)
    config["replicates"] = len(ids)
    config["first_replicate"] = min(ids)
    return ExperimentReport(first.kind, cols, rows, config, tuple(sorted(ids)))

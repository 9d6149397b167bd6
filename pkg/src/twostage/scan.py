"""Two-stage interaction scan: marginal screening, then pairwise interaction tests.

Stage 1 fits, for every marker, a model with the intercept (GLMs), the
fixed covariates and that marker, and keeps the marker when its Wald
p-value is below the stage-1 threshold.  Stage 2 fits the interaction
model for every pair of kept markers that passes the quality check and
tests the product term at ``alpha / K1``.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Union

import numpy as np

from . import backend
from .cox import RiskSetOrder
from .errors import InvalidInput
from .glm import DEFAULT_CONTROL, ConvergenceControl, Family, two_sided_p

__all__ = [
    "GenotypeMatrix",
    "Continuous",
    "Binary",
    "Counts",
    "Survival",
    "QualityConfig",
    "ScanConfig",
    "ScreenResult",
    "ScanReport",
    "QualityResult",
    "stage_one_screen",
    "stage_two_scan",
    "run_two_stage",
    "exhaustive_scan",
    "quality_check",
    "k1_effective",
]

FLAG_OK = "ok"
FLAG_NAMES = ("ok", "PairCollinear", "LowVariance", "LowMAF", "FitFailed", "FitFailed", "FitFailed")
_ITEM_BLOCK = 1024


@dataclass(frozen=True, eq=False)
class GenotypeMatrix:
    """n x p minor-allele counts with per-column MAF and variance."""

    data: np.ndarray
    names: tuple = ()
    maf: np.ndarray = field(init=False, repr=False)
    variance: np.ndarray = field(init=False, repr=False)
    codes: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        raw = np.asarray(self.data)
        if raw.ndim != 2:
            raise InvalidInput("genotype matrix must be 2-D (individuals x markers)")
        if raw.size and (not np.all(np.isfinite(raw)) or np.any((raw != 0) & (raw != 1) & (raw != 2))):
            raise InvalidInput("genotype entries must be 0, 1 or 2")
        data = np.ascontiguousarray(raw, dtype=np.uint8)
        n, p = data.shape
        names = tuple(self.names) if self.names else tuple(f"m{j}" for j in range(p))
        if len(names) != p:
            raise InvalidInput(f"{len(names)} marker names for {p} markers")
        x = data.astype(float)
        mean = x.mean(axis=0) if n else np.zeros(p)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "maf", mean / 2.0)
        object.__setattr__(self, "variance", x.var(axis=0) if n else np.zeros(p))
        object.__setattr__(self, "codes", np.ascontiguousarray(data.T))

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def p(self) -> int:
        return self.data.shape[1]

    def subset(self, columns) -> "GenotypeMatrix":
        columns = np.asarray(columns, dtype=np.intp)
        return GenotypeMatrix(self.data[:, columns], tuple(self.names[j] for j in columns))

    def __eq__(self, other):
        if not isinstance(other, GenotypeMatrix):
            return NotImplemented
        return self.names == other.names and np.array_equal(self.data, other.data)


@dataclass(frozen=True, eq=False)
class Continuous:
    y: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "y", np.asarray(self.y, dtype=float))


@dataclass(frozen=True, eq=False)
class Binary:
    y: np.ndarray

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        if not np.all((y == 0) | (y == 1)):
            raise InvalidInput("binary outcome must be 0/1")
        object.__setattr__(self, "y", y)


@dataclass(frozen=True, eq=False)
class Counts:
    y: np.ndarray
    offset: np.ndarray

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        t = np.asarray(self.offset, dtype=float)
        if y.shape != t.shape:
            raise InvalidInput("counts and offsets must have equal length")
        if np.any(y < 0) or np.any(y != np.floor(y)):
            raise InvalidInput("counts must be non-negative integers")
        if not np.all(np.isfinite(t)) or np.any(t <= 0):
            raise InvalidInput("offsets must be strictly positive")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "offset", t)


@dataclass(frozen=True, eq=False)
class Survival:
    time: np.ndarray
    event: np.ndarray

    def __post_init__(self):
        time = np.asarray(self.time, dtype=float)
        event = np.asarray(self.event)
        if time.shape != event.shape:
            raise InvalidInput("time and event must have equal length")
        if not np.all(np.isfinite(time)) or np.any(time <= 0):
            raise InvalidInput("survival times must be positive")
        if not np.all((event == 0) | (event == 1)):
            raise InvalidInput("event indicator must be 0/1")
        object.__setattr__(self, "time", time)
        object.__setattr__(self, "event", event.astype(bool))


Outcome = Union[Continuous, Binary, Counts, Survival]

_OUTCOME_TYPES = {
    Family.LINEAR: (Continuous,),
    Family.LOGISTIC: (Binary,),
    Family.POISSON: (Counts,),
    Family.COX: (Survival,),
}


def outcome_length(outcome) -> int:
    return (outcome.time if isinstance(outcome, Survival) else outcome.y).shape[0]


@dataclass(frozen=True)
class QualityConfig:
    r2_max: float = 0.9
    min_variance: float = 1e-8
    min_maf: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.r2_max <= 1.0:
            raise InvalidInput("r2_max must lie in (0, 1]")
        if not self.min_variance > 0.0:
            raise InvalidInput("min_variance must be positive")
        if not 0.0 <= self.min_maf < 0.5:
            raise InvalidInput("min_maf must lie in [0, 0.5)")


@dataclass(frozen=True, eq=False)
class ScanConfig:
    family: Family = Family.LINEAR
    alpha: float = 0.05
    stage1_threshold: float | np.ndarray = 0.05
    fixed_covariates: np.ndarray | None = None
    quality: QualityConfig = QualityConfig()
    k1_mode: str = "observed"
    standardize: bool = False
    control: ConvergenceControl = DEFAULT_CONTROL
    threads: int = 1

    def __post_init__(self):
        object.__setattr__(self, "family", Family.parse(self.family))
        if not 0.0 < self.alpha <= 1.0:
            raise InvalidInput("alpha must lie in (0, 1]")
        thr = np.asarray(self.stage1_threshold, dtype=float)
        if thr.ndim > 1 or np.any(~(thr > 0.0)) or np.any(thr > 1.0):
            raise InvalidInput("stage-1 thresholds must lie in (0, 1]")
        if thr.ndim == 1:
            object.__setattr__(self, "stage1_threshold", thr)
        mode = str(self.k1_mode).lower()
        if mode not in ("observed", "deterministic"):
            raise InvalidInput("k1_mode must be 'observed' or 'deterministic'")
        object.__setattr__(self, "k1_mode", mode)
        if self.fixed_covariates is not None:
            z = np.asarray(self.fixed_covariates, dtype=float)
            if z.ndim == 1:
                z = z[:, None]
            if not np.all(np.isfinite(z)):
                raise InvalidInput("fixed covariates contain non-finite values")
            object.__setattr__(self, "fixed_covariates", z)
        if self.threads < 1:
            raise InvalidInput("threads must be at least 1")

    def thresholds(self, p: int) -> np.ndarray:
        thr = np.asarray(self.stage1_threshold, dtype=float)
        if thr.ndim == 0:
            return np.full(p, float(thr))
        if thr.shape[0] != p:
            raise InvalidInput(f"{thr.shape[0]} stage-1 thresholds for {p} markers")
        return thr


@dataclass(frozen=True, eq=False)
class ScreenResult:
    estimate: np.ndarray
    std_err: np.ndarray
    z: np.ndarray
    p_value: np.ndarray
    threshold: np.ndarray
    passed: np.ndarray
    flag: np.ndarray

    @property
    def selected(self) -> np.ndarray:
        return np.flatnonzero(self.passed)

    @property
    def max_pairs(self) -> int:
        k = int(self.passed.sum())
        return k * (k - 1) // 2

    def rethreshold(self, threshold) -> "ScreenResult":
        """Same stage-1 statistics evaluated against other thresholds."""
        thr = np.broadcast_to(np.asarray(threshold, dtype=float), self.p_value.shape).copy()
        return replace(self, threshold=thr, passed=_passes(self.p_value, thr, self.flag))


def _passes(p_value, thr, flag):
    ok = flag == FLAG_OK
    with np.errstate(invalid="ignore"):
        return ok & ((p_value < thr) | (thr >= 1.0))


@dataclass(frozen=True, eq=False)
class ScanReport:
    """Stage-2 results, one entry per candidate pair in lexicographic order.

    Pairs failing quality or fitting carry a non-``ok`` flag and NaN
    statistics; they are not counted in ``k1``.
    """

    screen: ScreenResult | None
    k: np.ndarray
    l: np.ndarray
    estimate: np.ndarray
    z: np.ndarray
    raw_p: np.ndarray
    corrected_p: np.ndarray
    significant: np.ndarray
    flag: np.ndarray
    k1: int
    k1_effective: int
    alpha: float
    alpha2: float
    k1_mode: str

    @property
    def any_rejection(self) -> bool:
        return bool(self.significant.any())

    @property
    def n_pairs(self) -> int:
        return int(self.k.shape[0])

    def pair(self, k: int, l: int) -> int | None:
        """Row index of the pair (k, l) in either order, or None."""
        a, b = min(k, l), max(k, l)
        hit = np.flatnonzero((self.k == a) & (self.l == b))
        return int(hit[0]) if hit.size else None

    def records(self):
        for i in range(self.n_pairs):
            yield (int(self.k[i]), int(self.l[i]), float(self.estimate[i]), float(self.z[i]),
                   float(self.raw_p[i]), float(self.corrected_p[i]), bool(self.significant[i]),
                   str(self.flag[i]))


@dataclass(frozen=True)
class QualityResult:
    passed: bool
    reason: str

    def __bool__(self):
        return self.passed


def quality_check(geno: GenotypeMatrix, k: int, l: int, config: QualityConfig = QualityConfig()) -> QualityResult:
    """Reference pair quality check computed directly from the genotype columns."""
    if k == l:
        raise InvalidInput("quality check needs two distinct markers")
    xk = geno.data[:, k].astype(float)
    xl = geno.data[:, l].astype(float)
    prod = xk * xl
    variances = [np.var(xk), np.var(xl), np.var(prod)]
    if any(not v > 0.0 or v < config.min_variance for v in variances):
        return QualityResult(False, "LowVariance")
    if xk.mean() / 2.0 < config.min_maf or xl.mean() / 2.0 < config.min_maf:
        return QualityResult(False, "LowMAF")
    for a, b in ((xk, xl), (xk, prod), (xl, prod)):
        r = np.corrcoef(a, b)[0, 1]
        if r * r >= config.r2_max:
            return QualityResult(False, "PairCollinear")
    return QualityResult(True, FLAG_OK)


def k1_effective(mode: str, k1_observed: int, thresholds: np.ndarray) -> int:
    """Number of tests used in the Bonferroni correction."""
    if mode == "observed":
        return int(k1_observed)
    expected = float(np.sum(thresholds)) ** 2
    return max(1, math.ceil(round(expected, 9)))


class _Prepared:
    """Kernel-ready arrays shared by all fits on one (genotypes, outcome, config)."""

    def __init__(self, geno: GenotypeMatrix, outcome, config: ScanConfig):
        family = config.family
        if not isinstance(outcome, _OUTCOME_TYPES[family]):
            raise InvalidInput(f"{type(outcome).__name__} outcome does not fit the {family.value} family")
        n = geno.n
        if outcome_length(outcome) != n:
            raise InvalidInput(f"outcome has {outcome_length(outcome)} rows, genotypes have {n}")
        self.geno = geno
        self.family = family
        self.config = config
        fixed = config.fixed_covariates
        if fixed is None:
            fixed = np.zeros((n, 0))
        if fixed.shape[0] != n:
            raise InvalidInput(f"fixed covariates have {fixed.shape[0]} rows, genotypes have {n}")
        empty_f = np.zeros(0)
        empty_i = np.zeros(0, dtype=np.int64)
        self.order, self.block_start, self.event_sorted = empty_i, empty_i, np.zeros(0, dtype=np.uint8)
        self.offsets = empty_f
        if family is Family.COX:
            if not outcome.event.any():
                raise InvalidInput("no events observed")
            rs = RiskSetOrder.from_outcome(outcome.time, outcome.event)
            self.order, self.block_start, self.event_sorted = rs.order, rs.block_start, rs.event_sorted
            self.y = empty_f
            fixed = fixed[rs.order]
        elif family is Family.LINEAR:
            y = outcome.y
            self.y = np.ascontiguousarray(y - y.mean())
        else:
            self.y = np.ascontiguousarray(outcome.y)
            if family is Family.POISSON:
                self.offsets = np.ascontiguousarray(outcome.offset)
        self.fixed = np.ascontiguousarray(fixed, dtype=float)
        levels = np.tile(np.arange(3.0), (geno.p, 1))
        if config.standardize:
            sd = np.sqrt(geno.variance)
            safe = np.where(sd > 0, sd, 1.0)
            levels = (levels - 2.0 * geno.maf[:, None]) / safe[:, None]
        self.levels = np.ascontiguousarray(levels)

    def fit_items(self, items: np.ndarray, check_quality: bool, kernel=None):
        """Run the scan kernel over ``items`` in fixed-size blocks (thread-count independent)."""
        kernel = kernel or backend.scan_items
        items = np.ascontiguousarray(items, dtype=np.int64).reshape(-1, 2)
        m = items.shape[0]
        est = np.full(m, np.nan)
        se = np.full(m, np.nan)
        status = np.zeros(m, dtype=np.int8)
        iters = np.zeros(m, dtype=np.int32)
        q = self.config.quality
        c = self.config.control

        def run(start):
            stop = min(start + _ITEM_BLOCK, m)
            kernel(self.geno.codes, self.levels, items[start:stop], self.family.code, self.y,
                   self.offsets, self.fixed, self.order, self.block_start, self.event_sorted,
                   q.r2_max, q.min_variance, q.min_maf, check_quality,
                   c.tol, c.rel_loglik_tol, c.max_iter, c.max_halvings, c.separation_bound,
                   est[start:stop], se[start:stop], status[start:stop], iters[start:stop])

        starts = range(0, m, _ITEM_BLOCK)
        threads = self.config.threads
        if threads > 1 and m > _ITEM_BLOCK:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                list(pool.map(run, starts))
        else:
            for s in starts:
                run(s)
        return est, se, status


def _check_geno(geno: GenotypeMatrix):
    if not isinstance(geno, GenotypeMatrix):
        geno = GenotypeMatrix(geno)
    if geno.p == 0:
        raise InvalidInput("genotype matrix has no markers")
    if geno.n == 0:
        raise InvalidInput("genotype matrix has no individuals")
    return geno


def _screen(prep: _Prepared, thresholds: np.ndarray) -> ScreenResult:
    geno, q = prep.geno, prep.config.quality
    p = geno.p
    flag = np.full(p, FLAG_OK, dtype=object)
    low_var = ~(geno.variance > 0.0) | (geno.variance < q.min_variance)
    flag[low_var] = "LowVariance"
    flag[~low_var & (geno.maf < q.min_maf)] = "LowMAF"
    fit_idx = np.flatnonzero(flag == FLAG_OK)
    items = np.column_stack([fit_idx, np.full(fit_idx.size, -1)])
    est_f, se_f, status = prep.fit_items(items, check_quality=False)
    est = np.full(p, np.nan)
    se = np.full(p, np.nan)
    est[fit_idx], se[fit_idx] = est_f, se_f
    flag[fit_idx[status != 0]] = "FitFailed"
    good = flag == FLAG_OK
    z = np.full(p, np.nan)
    z[good] = est[good] / se[good]
    pval = np.full(p, np.nan)
    pval[good] = two_sided_p(z[good])
    flag = flag.astype(str)
    return ScreenResult(estimate=est, std_err=se, z=z, p_value=pval, threshold=thresholds.copy(),
                        passed=_passes(pval, thresholds, flag), flag=flag)


def stage_one_screen(geno: GenotypeMatrix, outcome, config: ScanConfig) -> ScreenResult:
    """Marginal Wald screen of every marker against its stage-1 threshold."""
    geno = _check_geno(geno)
    prep = _Prepared(geno, outcome, config)
    return _screen(prep, config.thresholds(geno.p))


def _pairs_report(prep: _Prepared, markers: np.ndarray, screen, thresholds) -> ScanReport:
    config = prep.config
    markers = np.sort(np.asarray(markers, dtype=np.int64))
    iu, ju = np.triu_indices(markers.size, k=1)
    k, l = markers[iu], markers[ju]
    est, se, status = prep.fit_items(np.column_stack([k, l]), check_quality=True)
    flag = np.asarray(FLAG_NAMES, dtype=object)[status].astype(str) if status.size else np.zeros(0, dtype=str)
    ok = status == 0
    z = np.where(ok, est / np.where(ok, se, 1.0), np.nan)
    raw_p = np.full(z.shape, np.nan)
    raw_p[ok] = two_sided_p(z[ok])
    k1 = int(ok.sum())
    k1_eff = k1_effective(config.k1_mode, k1, thresholds)
    alpha2 = config.alpha / k1_eff if k1_eff >= 1 else math.nan
    corrected = np.full(z.shape, np.nan)
    corrected[ok] = np.minimum(1.0, raw_p[ok] * k1_eff)
    significant = np.zeros(z.shape, dtype=bool)
    if k1_eff >= 1:
        significant[ok] = raw_p[ok] < alpha2
    return ScanReport(screen=screen, k=k, l=l, estimate=np.where(ok, est, np.nan), z=z, raw_p=raw_p,
                      corrected_p=corrected, significant=significant, flag=flag, k1=k1,
                      k1_effective=k1_eff, alpha=config.alpha, alpha2=alpha2, k1_mode=config.k1_mode)


def stage_two_scan(geno: GenotypeMatrix, outcome, screen: ScreenResult, config: ScanConfig,
                   _prepared: _Prepared | None = None) -> ScanReport:
    """Interaction tests for every quality-passing pair of screened-in markers."""
    geno = _check_geno(geno)
    if screen.passed.shape[0] != geno.p:
        raise InvalidInput("screen result does not match the genotype matrix")
    prep = _prepared or _Prepared(geno, outcome, config)
    return _pairs_report(prep, screen.selected, screen, screen.threshold)


def run_two_stage(geno: GenotypeMatrix, outcome, config: ScanConfig) -> ScanReport:
    geno = _check_geno(geno)
    prep = _Prepared(geno, outcome, config)
    screen = _screen(prep, config.thresholds(geno.p))
    return _pairs_report(prep, screen.selected, screen, screen.threshold)


def exhaustive_scan(geno: GenotypeMatrix, outcome, config: ScanConfig) -> ScanReport:
    """Single-stage scan of all p(p-1)/2 pairs, Bonferroni over the pairs actually tested."""
    geno = _check_geno(geno)
    prep = _Prepared(geno, outcome, replace(config, k1_mode="observed"))
    return _pairs_report(prep, np.arange(geno.p), None, np.ones(geno.p))


def run_thresholds(geno: GenotypeMatrix, outcome, config: ScanConfig, thresholds) -> list[ScanReport]:
    """Two-stage scans for several stage-1 thresholds sharing one stage-1 pass."""
    geno = _check_geno(geno)
    prep = _Prepared(geno, outcome, config)
    base = _screen(prep, config.thresholds(geno.p))
    reports = []
    for thr in thresholds:
        screen = base.rethreshold(thr)
        reports.append(_pairs_report(prep, screen.selected, screen, screen.threshold))
    return reports

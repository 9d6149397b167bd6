"""Synthetic genotype and phenotype generators.

All randomness flows through counter-based Philox streams keyed by
``(seed, stream, *sub_keys)``, so a replicate's data do not depend on
which worker generated it or on how many other replicates ran.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import optimize, special, stats

from .errors import InvalidRange
from .glm import Family
from .scan import Binary, Continuous, Counts, GenotypeMatrix, Survival

__all__ = [
    "RngSpec",
    "make_rng",
    "PhenotypeSpec",
    "simulate_genotypes_independent",
    "simulate_genotypes_correlated",
    "simulate_phenotype",
    "genotype_correlation",
    "latent_correlation_for",
]

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class RngSpec:
    seed: int
    stream: int = 0

    def generator(self, *sub) -> np.random.Generator:
        return make_rng(self.seed, self.stream, *sub)


def make_rng(seed: int, stream: int = 0, *sub: int) -> np.random.Generator:
    """Independent Philox generator for the key ``(stream, *sub)`` under ``seed``."""
    key = tuple(int(k) & _MASK64 for k in (stream, *sub))
    ss = np.random.SeedSequence(int(seed) & _MASK64, spawn_key=key)
    return np.random.Generator(np.random.Philox(ss))


def _as_rng(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, RngSpec):
        return rng.generator()
    return make_rng(int(rng))


def _check_maf_range(maf_low, maf_high):
    if not 0.0 < maf_low <= maf_high <= 0.5:
        raise InvalidRange("need 0 < maf_low <= maf_high <= 0.5")


def simulate_genotypes_independent(n: int, p: int, maf_low: float = 0.1, maf_high: float = 0.5,
                                   causal_maf: float = 0.2, causal_count: int = 0,
                                   rng=0) -> GenotypeMatrix:
    """Independent Binomial(2, MAF_j) columns with MAF_j ~ U[maf_low, maf_high].

    With ``causal_count=2`` columns 0 and 1 use ``causal_maf`` instead.
    """
    if n < 1 or p < 1:
        raise InvalidRange("n and p must be at least 1")
    _check_maf_range(maf_low, maf_high)
    if causal_count not in (0, 2):
        raise InvalidRange("causal_count must be 0 or 2")
    if causal_count > p:
        raise InvalidRange("causal markers need p >= 2")
    if not 0.0 < causal_maf <= 0.5:
        raise InvalidRange("causal_maf must lie in (0, 0.5]")
    rng = _as_rng(rng)
    maf = rng.uniform(maf_low, maf_high, size=p)
    maf[:causal_count] = causal_maf
    g = rng.binomial(2, maf, size=(n, p)).astype(np.uint8)
    return GenotypeMatrix(g)


def genotype_correlation(rho: float, maf_a: float, maf_b: float) -> float:
    """Pearson correlation of allele counts produced by thresholding a bivariate
    normal pair with correlation ``rho`` (two independent haplotypes)."""
    a = stats.norm.ppf(1.0 - maf_a)
    b = stats.norm.ppf(1.0 - maf_b)
    if rho == 0.0:
        return 0.0
    # P(Z1 > a, Z2 > b) = P(Z1 < -a, Z2 < -b)
    joint = stats.multivariate_normal(mean=[0.0, 0.0], cov=[[1.0, rho], [rho, 1.0]]).cdf([-a, -b])
    return (joint - maf_a * maf_b) / np.sqrt(maf_a * (1 - maf_a) * maf_b * (1 - maf_b))


@lru_cache(maxsize=64)
def latent_correlation_for(target: float, maf_a: float, maf_b: float) -> float:
    """Latent normal correlation that yields allele-count correlation ``target``."""
    if target == 0.0:
        return 0.0
    lo, hi = (0.0, 0.999999) if target > 0 else (-0.999999, 0.0)
    f = lambda r: genotype_correlation(r, maf_a, maf_b) - target
    if f(lo) * f(hi) > 0:
        raise InvalidRange(f"correlation {target} unreachable for MAFs {maf_a}, {maf_b}")
    return optimize.brentq(f, lo, hi, xtol=1e-12)


def _haplotype_chain(rng, n, m, rho, thresholds):
    z = np.empty((n, m))
    z[:, 0] = rng.standard_normal(n)
    innov = np.sqrt(1.0 - rho * rho)
    e = rng.standard_normal((n, m - 1)) if m > 1 else None
    for j in range(1, m):
        z[:, j] = rho * z[:, j - 1] + innov * e[:, j - 1]
    return z > thresholds


def simulate_genotypes_correlated(n: int, p: int, block_rho: float = 0.7, causal_rho: float = 0.3,
                                  causal_mafs=(0.48, 0.25), maf_low: float = 0.1,
                                  maf_high: float = 0.5, causal: bool = True,
                                  rng=0) -> GenotypeMatrix:
    """Correlated markers from a thresholded latent Gaussian AR(1) process.

    Each individual carries two independent haplotypes.  On a haplotype the
    latent values of neighbouring columns have lag-1 correlation
    ``block_rho``; column j carries the minor allele when its latent value
    exceeds the (1 - MAF_j) normal quantile.  With ``causal=True`` columns
    0 and 1 form a separate latent pair whose allele counts have Pearson
    correlation ``causal_rho`` and MAFs ``causal_mafs``; the chain then
    covers columns 2..p-1.
    """
    if n < 1 or p < 1:
        raise InvalidRange("n and p must be at least 1")
    if not abs(block_rho) < 1.0:
        raise InvalidRange("|block_rho| must be below 1")
    _check_maf_range(maf_low, maf_high)
    if causal and p < 2:
        raise InvalidRange("causal markers need p >= 2")
    rng = _as_rng(rng)
    n_causal = 2 if causal else 0
    m = p - n_causal
    maf = rng.uniform(maf_low, maf_high, size=m)
    thr = stats.norm.ppf(1.0 - maf)
    g = np.zeros((n, p), dtype=np.uint8)
    if causal:
        ma, mb = (float(v) for v in causal_mafs)
        if not (0.0 < ma <= 0.5 and 0.0 < mb <= 0.5):
            raise InvalidRange("causal MAFs must lie in (0, 0.5]")
        r = latent_correlation_for(float(causal_rho), ma, mb)
        ct = stats.norm.ppf([1.0 - ma, 1.0 - mb])
        chol = np.array([[1.0, 0.0], [r, np.sqrt(1.0 - r * r)]])
        for _ in range(2):
            z = rng.standard_normal((n, 2)) @ chol.T
            g[:, :2] += (z > ct).astype(np.uint8)
    if m > 0:
        for _ in range(2):
            g[:, n_causal:] += _haplotype_chain(rng, n, m, block_rho, thr).astype(np.uint8)
    return GenotypeMatrix(g)


@dataclass(frozen=True)
class PhenotypeSpec:
    family: Family = Family.LINEAR
    beta1: float = 0.0
    beta2: float = 0.0
    beta3: float = 0.0
    causal: tuple = (0, 1)
    sd: float = 1.0
    intercept: float = 0.0
    offset_range: tuple = (1.0, 5.0)
    weibull_shape: float = 2.0
    weibull_scale: float = 1.0
    censor_window: tuple = (0.70, 0.99)

    def __post_init__(self):
        object.__setattr__(self, "family", Family.parse(self.family))
        a, b = self.causal
        if a == b or a < 0 or b < 0:
            raise InvalidRange("causal indices must be distinct and non-negative")
        lo, hi = self.offset_range
        if not 0.0 < lo <= hi:
            raise InvalidRange("offset range must satisfy 0 < low <= high")
        q0, q1 = self.censor_window
        if not 0.0 <= q0 <= q1 < 1.0:
            raise InvalidRange("censoring window must satisfy 0 <= low <= high < 1")
        if not (self.sd > 0 and self.weibull_shape > 0 and self.weibull_scale > 0):
            raise InvalidRange("sd and Weibull parameters must be positive")

    def weibull_quantile(self, q):
        """Baseline (eta = 0) event-time quantile."""
        return self.weibull_scale * (-np.log1p(-np.asarray(q, dtype=float))) ** (1.0 / self.weibull_shape)


def linear_predictor(geno: GenotypeMatrix, spec: PhenotypeSpec) -> np.ndarray:
    a, b = spec.causal
    if max(a, b) >= geno.p:
        raise InvalidRange(f"causal index out of range for {geno.p} markers")
    x1 = geno.data[:, a].astype(float)
    x2 = geno.data[:, b].astype(float)
    return spec.beta1 * x1 + spec.beta2 * x2 + spec.beta3 * x1 * x2


def simulate_phenotype(geno: GenotypeMatrix, spec: PhenotypeSpec, rng=0, eta=None):
    """Outcome drawn given the causal pair's linear predictor.

    ``eta`` overrides the predictor computed from ``geno`` (used by the
    calibration checks).
    """
    rng = _as_rng(rng)
    eta = linear_predictor(geno, spec) if eta is None else np.asarray(eta, dtype=float)
    n = eta.shape[0]
    fam = spec.family
    if fam is Family.LINEAR:
        return Continuous(spec.intercept + eta + spec.sd * rng.standard_normal(n))
    if fam is Family.LOGISTIC:
        prob = special.expit(spec.intercept + eta)
        return Binary((rng.random(n) < prob).astype(float))
    if fam is Family.POISSON:
        t = rng.uniform(*spec.offset_range, size=n)
        return Counts(rng.poisson(t * np.exp(spec.intercept + eta)).astype(float), t)
    u = rng.random(n)
    # inverse of S(t) = exp(-(t/scale)^shape * e^eta)
    event_time = spec.weibull_scale * (-np.log(u) * np.exp(-eta)) ** (1.0 / spec.weibull_shape)
    lo, hi = spec.weibull_quantile(spec.censor_window)
    censor = rng.uniform(lo, hi, size=n)
    event = event_time <= censor
    return Survival(np.where(event, event_time, censor), event.astype(np.int8))

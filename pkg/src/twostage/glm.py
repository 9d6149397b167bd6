"""Maximum-likelihood fitting of canonical-link GLMs and Wald tests.

Three families are supported: Gaussian (identity link), logistic (logit
link) and Poisson with a multiplicative exposure offset (log link, the
mean is ``t * exp(x'beta)``).  Gaussian fits are solved in closed form,
the other two by Newton-Raphson, which coincides with IRLS for canonical
links.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, gammaln, ndtr

from .errors import DegenerateVariance, InvalidInput, InvalidResponse, SingularDesign

__all__ = [
    "Family",
    "ConvergenceControl",
    "FitResult",
    "WaldTest",
    "ConditioningWarning",
    "fit_glm",
    "wald_test",
    "wald_from_estimate",
    "glm_loglik",
    "glm_score",
    "glm_information",
    "cholesky_checked",
]

#: Relative Cholesky pivot below which a matrix is treated as singular.
PIVOT_TOL = 1e-12
COND_WARN = 1e12


class ConditioningWarning(UserWarning):
    pass


class Family(str, enum.Enum):
    LINEAR = "linear"
    LOGISTIC = "logistic"
    POISSON = "poisson"
    COX = "cox"

    @classmethod
    def parse(cls, value: "Family | str") -> "Family":
        if isinstance(value, Family):
            return value
        aliases = {"gaussian": "linear", "poissonoffset": "poisson", "poisson_offset": "poisson"}
        key = str(value).strip().lower()
        try:
            return cls(aliases.get(key, key))
        except ValueError:
            raise InvalidInput(f"unknown family {value!r}") from None

    @property
    def code(self) -> int:
        return _FAMILY_CODES[self]


_FAMILY_CODES = {Family.LINEAR: 0, Family.LOGISTIC: 1, Family.POISSON: 2, Family.COX: 3}


@dataclass(frozen=True)
class ConvergenceControl:
    """Stopping rules for the Newton iterations.

    A fit is declared converged only when the max-norm of the score drops
    below ``tol``.  ``rel_loglik_tol`` detects a stall: when step-halving
    cannot improve the objective by more than this relative amount the
    iteration stops early (and is reported as not converged unless the
    score criterion also holds).
    """

    tol: float = 1e-8
    rel_loglik_tol: float = 1e-12
    max_iter: int = 50
    max_halvings: int = 10
    separation_bound: float = 15.0


DEFAULT_CONTROL = ConvergenceControl()


@dataclass(frozen=True)
class FitResult:
    beta: np.ndarray
    cov: np.ndarray
    loglik: float
    iterations: int
    converged: bool
    sigma2: float | None = None
    separation: bool = False
    score_norm: float = 0.0
    family: Family = Family.LINEAR

    @property
    def std_err(self) -> np.ndarray:
        return np.sqrt(np.diag(self.cov))


@dataclass(frozen=True)
class WaldTest:
    estimate: float
    std_err: float
    z: float
    p_value: float


def two_sided_p(z):
    """Two-sided standard-normal p-value, ``2 * (1 - Phi(|z|))``."""
    return 2.0 * ndtr(-np.abs(z))


def wald_from_estimate(estimate: float, variance: float) -> WaldTest:
    if not math.isfinite(variance) or variance <= 0.0 or not math.isfinite(estimate):
        raise DegenerateVariance(f"variance {variance!r} is not a positive finite number")
    se = math.sqrt(variance)
    z = estimate / se
    return WaldTest(float(estimate), se, z, float(two_sided_p(z)))


def wald_test(fit: FitResult, coef_index: int) -> WaldTest:
    q = fit.beta.shape[0]
    if not 0 <= coef_index < q:
        raise InvalidInput(f"coefficient index {coef_index} out of range for {q} coefficients")
    return wald_from_estimate(float(fit.beta[coef_index]), float(fit.cov[coef_index, coef_index]))


def cholesky_checked(a: np.ndarray, what: str = "information matrix") -> np.ndarray:
    """Lower Cholesky factor of a symmetric matrix, failing on tiny pivots.

    The squared pivot of column j relative to ``a[j, j]`` is the share of
    that column not explained by the previous ones; below ``PIVOT_TOL`` the
    matrix is treated as singular.
    """
    a = np.asarray(a, dtype=float)
    q = a.shape[0]
    diag = np.diag(a)
    if q == 0:
        return a.copy()
    if not np.all(np.isfinite(a)) or np.any(diag <= 0.0):
        raise SingularDesign(f"{what} is not positive definite")
    try:
        low = np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        raise SingularDesign(f"{what} is not positive definite") from None
    if np.any(np.diag(low) ** 2 <= PIVOT_TOL * diag):
        raise SingularDesign(f"{what} is singular at working precision")
    return low


def _chol_inverse(low: np.ndarray) -> np.ndarray:
    q = low.shape[0]
    linv = np.linalg.solve(low, np.eye(q))
    inv = linv.T @ linv
    return 0.5 * (inv + inv.T)


def _warn_condition(info: np.ndarray) -> None:
    # raw 2-norm condition: near-collinearity already fails the pivot check,
    # this catches badly scaled columns that still lose accuracy
    if info.size == 0:
        return
    cond = np.linalg.cond(info)
    if cond > COND_WARN:
        warnings.warn(f"information matrix condition number {cond:.3g} exceeds {COND_WARN:.0e}",
                      ConditioningWarning, stacklevel=3)


def _check_response(y: np.ndarray, family: Family, offsets):
    if not np.all(np.isfinite(y)):
        raise InvalidResponse("response contains non-finite values")
    if family is Family.LOGISTIC:
        if not np.all((y == 0) | (y == 1)):
            raise InvalidResponse("logistic response must be 0/1")
    elif family is Family.POISSON:
        if np.any(y < 0) or np.any(y != np.floor(y)):
            raise InvalidResponse("Poisson response must be non-negative integers")
    if family is Family.POISSON:
        if offsets is None:
            raise InvalidInput("Poisson family requires offsets")
        offsets = np.asarray(offsets, dtype=float)
        if offsets.shape != y.shape:
            raise InvalidInput("offsets must have one entry per observation")
        if not np.all(np.isfinite(offsets)) or np.any(offsets <= 0):
            raise InvalidInput("offsets must be strictly positive")
        return offsets
    if offsets is not None:
        raise InvalidInput(f"offsets are only accepted for the Poisson family, not {family.value}")
    return None


def glm_loglik(beta, design, y, family, offsets=None) -> float:
    """Log-likelihood of a logistic or Poisson model (including constants)."""
    family = Family.parse(family)
    eta = design @ beta
    if family is Family.LOGISTIC:
        return float(np.sum(y * eta - np.logaddexp(0.0, eta)))
    if family is Family.POISSON:
        log_t = np.log(offsets)
        return float(np.sum(y * (eta + log_t) - offsets * np.exp(eta) - gammaln(y + 1.0)))
    raise InvalidInput("glm_loglik covers the logistic and Poisson families")


def _mean(eta, family, offsets):
    if family is Family.LOGISTIC:
        return expit(eta)
    return offsets * np.exp(eta)


def glm_score(beta, design, y, family, offsets=None) -> np.ndarray:
    family = Family.parse(family)
    mu = _mean(design @ beta, family, offsets)
    return design.T @ (y - mu)


def glm_information(beta, design, y, family, offsets=None) -> np.ndarray:
    """Observed (= expected, canonical link) Fisher information."""
    family = Family.parse(family)
    mu = _mean(design @ beta, family, offsets)
    w = mu * (1.0 - mu) if family is Family.LOGISTIC else mu
    return (design * w[:, None]).T @ design


def _validate(design, y):
    design = np.asarray(design, dtype=float)
    y = np.asarray(y, dtype=float)
    if design.ndim != 2:
        raise InvalidInput("design must be a 2-D array")
    n, q = design.shape
    if y.shape != (n,):
        raise InvalidInput(f"response has shape {y.shape}, expected ({n},)")
    if n < q + 1:
        raise InvalidInput(f"need at least q + 1 = {q + 1} observations, got {n}")
    if not np.all(np.isfinite(design)):
        raise InvalidInput("design contains non-finite values")
    return design, y


def fit_glm(design, y, family="linear", offsets=None, control: ConvergenceControl | None = None) -> FitResult:
    """Fit a GLM by maximum likelihood.

    Parameters
    ----------
    design : (n, q) array
        Design matrix; by convention column 0 is the intercept.
    y : (n,) array
        Response: any real for ``linear``, 0/1 for ``logistic``, counts
        for ``poisson``.
    family : Family or str
    offsets : (n,) array, optional
        Positive exposures ``t``; required for, and only for, ``poisson``.
    control : ConvergenceControl, optional

    Returns
    -------
    FitResult
        ``cov`` is ``sigma2 * inv(X'X)`` for the Gaussian family and the
        inverse Fisher information otherwise.  Non-convergence is reported
        through ``converged=False`` rather than raised.

    Raises
    ------
    SingularDesign
        If X'X or the information matrix is singular at working precision.
    InvalidResponse
        If ``y`` is not valid for the family.
    """
    family = Family.parse(family)
    if family is Family.COX:
        raise InvalidInput("use twostage.cox.fit_cox for the Cox model")
    control = control or DEFAULT_CONTROL
    design, y = _validate(design, y)
    offsets = _check_response(y, family, offsets)
    if family is Family.LINEAR:
        return _fit_linear(design, y)
    return _fit_newton(design, y, family, offsets, control)


def _fit_linear(design, y) -> FitResult:
    n, q = design.shape
    xtx = design.T @ design
    low = cholesky_checked(xtx, "X'X")
    _warn_condition(xtx)
    beta = np.linalg.solve(low.T, np.linalg.solve(low, design.T @ y))
    resid = y - design @ beta
    rss = float(resid @ resid)
    sigma2 = rss / (n - q)
    cov = sigma2 * _chol_inverse(low)
    with np.errstate(divide="ignore"):
        loglik = -0.5 * n * (math.log(2.0 * math.pi) + np.log(rss / n) + 1.0) if rss > 0 else math.inf
    score = design.T @ resid
    return FitResult(beta=beta, cov=cov, loglik=float(loglik), iterations=1, converged=True,
                     sigma2=sigma2, score_norm=float(np.max(np.abs(score), initial=0.0)),
                     family=Family.LINEAR)


def start_values(design, y, family, offsets) -> np.ndarray:
    """Intercept at its intercept-only MLE when column 0 is constant, zeros elsewhere."""
    q = design.shape[1]
    beta = np.zeros(q)
    if q and np.all(design[:, 0] == 1.0):
        ybar = y.mean()
        if family is Family.LOGISTIC and 0.0 < ybar < 1.0:
            beta[0] = math.log(ybar / (1.0 - ybar))
        elif family is Family.POISSON and ybar > 0.0:
            beta[0] = math.log(y.sum() / offsets.sum())
    return beta


def _fit_newton(design, y, family, offsets, control) -> FitResult:
    beta = start_values(design, y, family, offsets)
    ll = glm_loglik(beta, design, y, family, offsets)
    converged = False
    iterations = 0
    low = None
    while True:
        score = glm_score(beta, design, y, family, offsets)
        info = glm_information(beta, design, y, family, offsets)
        score_norm = float(np.max(np.abs(score)))
        if score_norm < control.tol:
            converged = True
            break
        if iterations >= control.max_iter:
            break
        low = cholesky_checked(info)
        step = np.linalg.solve(low.T, np.linalg.solve(low, score))
        iterations += 1
        new_beta, new_ll, stalled = _halve(lambda b: glm_loglik(b, design, y, family, offsets),
                                           beta, step, ll, control)
        beta, ll = new_beta, new_ll
        if stalled:
            score = glm_score(beta, design, y, family, offsets)
            info = glm_information(beta, design, y, family, offsets)
            score_norm = float(np.max(np.abs(score)))
            converged = score_norm < control.tol
            break
    separation = bool(np.any(np.abs(beta) > control.separation_bound))
    if separation:
        converged = False
    low = cholesky_checked(info)
    _warn_condition(info)
    cov = _chol_inverse(low)
    return FitResult(beta=beta, cov=cov, loglik=ll, iterations=iterations, converged=converged,
                     separation=separation, score_norm=score_norm, family=family)


def _halve(objective, beta, step, ll, control):
    """Newton step with step-halving; returns (beta, loglik, stalled)."""
    scale = 1.0
    for _ in range(control.max_halvings + 1):
        cand = beta + scale * step
        cand_ll = objective(cand)
        if np.isfinite(cand_ll) and cand_ll >= ll - control.rel_loglik_tol * abs(ll):
            stalled = scale < 1.0 and abs(cand_ll - ll) <= control.rel_loglik_tol * max(abs(ll), 1.0)
            return cand, cand_ll, stalled
        scale *= 0.5
    return beta, ll, True

"""Cox proportional-hazards regression via the log partial likelihood.

Ties are handled with the Breslow approximation and a subject is at
risk at its own event time (risk set ``{j : T_j >= t}``).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInput, NoEvents, NoInformation, SingularInformation, SingularDesign
from .glm import (
    DEFAULT_CONTROL,
    ConvergenceControl,
    Family,
    FitResult,
    WaldTest,
    _chol_inverse,
    _halve,
    _warn_condition,
    cholesky_checked,
    wald_test,
)

__all__ = ["SurvivalData", "RiskSetOrder", "fit_cox", "cox_wald_test", "cox_partial_loglik",
           "cox_derivatives", "cox_newton"]


@dataclass(frozen=True)
class SurvivalData:
    time: np.ndarray
    event: np.ndarray
    covariates: np.ndarray

    def __post_init__(self):
        time = np.asarray(self.time, dtype=float)
        event = np.asarray(self.event).astype(bool)
        cov = np.asarray(self.covariates, dtype=float)
        if cov.ndim == 1:
            cov = cov[:, None]
        if time.ndim != 1 or event.shape != time.shape or cov.shape[0] != time.shape[0]:
            raise InvalidInput("time, event and covariates must have matching lengths")
        if not np.all(np.isfinite(time)) or np.any(time <= 0):
            raise InvalidInput("survival times must be positive and finite")
        if not np.all(np.isfinite(cov)):
            raise InvalidInput("covariates contain non-finite values")
        if not event.any():
            raise NoEvents("no events observed")
        object.__setattr__(self, "time", time)
        object.__setattr__(self, "event", event)
        object.__setattr__(self, "covariates", cov)

    @property
    def n(self) -> int:
        return self.time.shape[0]


@dataclass(frozen=True)
class RiskSetOrder:
    """Time-sorted layout shared by every fit on the same survival outcome.

    ``order`` sorts subjects by time (events before censorings at equal
    times); ``block_start`` lists the sorted positions that open a new
    distinct time value.
    """

    order: np.ndarray
    block_start: np.ndarray
    event_sorted: np.ndarray

    @classmethod
    def from_outcome(cls, time, event) -> "RiskSetOrder":
        time = np.asarray(time, dtype=float)
        event = np.asarray(event).astype(bool)
        order = np.lexsort((~event, time)).astype(np.int64)
        ts = time[order]
        starts = np.flatnonzero(np.r_[True, ts[1:] != ts[:-1]]).astype(np.int64)
        return cls(order=order, block_start=starts,
                   event_sorted=np.ascontiguousarray(event[order], dtype=np.uint8))


def cox_derivatives(beta, xs, event_sorted, block_start, need_info=True):
    """Log partial likelihood, score and information for time-sorted data.

    ``xs`` holds the covariate rows in risk-set order.  Sums over the risk
    set are accumulated from the latest time backwards, one block of
    tied times at a time.
    """
    beta = np.asarray(beta, dtype=float)
    q = xs.shape[1]
    eta = xs @ beta
    shift = eta.max() if eta.size else 0.0
    w = np.exp(eta - shift)
    # reverse cumulative sums, evaluated at the first row of each tie block
    s0 = np.cumsum(w[::-1])[::-1][block_start]
    wx = w[:, None] * xs
    s1 = np.cumsum(wx[::-1], axis=0)[::-1][block_start]
    n = xs.shape[0]
    block_of = np.repeat(np.arange(block_start.size), np.diff(np.r_[block_start, n]))
    ev = event_sorted.astype(bool)
    eb = block_of[ev]
    log_s0 = np.log(s0[eb]) + shift
    ll = float(np.sum(eta[ev] - log_s0))
    mean = s1[eb] / s0[eb][:, None]
    score = np.sum(xs[ev] - mean, axis=0)
    if not need_info:
        return ll, score, None
    wxx = wx[:, :, None] * xs[:, None, :]
    s2 = np.cumsum(wxx[::-1], axis=0)[::-1][block_start]
    info = np.sum(s2[eb] / s0[eb][:, None, None], axis=0) - mean.T @ mean
    info = 0.5 * (info + info.T)
    if q == 0:
        info = np.zeros((0, 0))
    return ll, score, info


def cox_partial_loglik(data: SurvivalData, beta) -> float:
    rs = RiskSetOrder.from_outcome(data.time, data.event)
    xs = data.covariates[rs.order]
    return cox_derivatives(beta, xs, rs.event_sorted, rs.block_start, need_info=False)[0]


def fit_cox(data: SurvivalData, control: ConvergenceControl | None = None,
            risk_order: RiskSetOrder | None = None) -> FitResult:
    """Newton-Raphson maximisation of the Breslow log partial likelihood.

    ``cov`` is the inverse observed information at the maximiser.
    Divergence towards infinity (monotone likelihood) is reported as
    ``converged=False, separation=True``.
    """
    control = control or DEFAULT_CONTROL
    x = data.covariates
    q = x.shape[1]
    if q == 0:
        raise InvalidInput("the Cox model needs at least one covariate")
    if np.any(np.ptp(x, axis=0) == 0.0):
        raise NoInformation("a covariate is constant; its coefficient is not identified")
    if int(data.event.sum()) < q + 1:
        raise InvalidInput(f"need at least q + 1 = {q + 1} events, got {int(data.event.sum())}")
    rs = risk_order or RiskSetOrder.from_outcome(data.time, data.event)
    return cox_newton(x[rs.order], rs, control)


def cox_newton(xs, rs: RiskSetOrder, control: ConvergenceControl) -> FitResult:
    """Newton iterations on covariate rows already in risk-set order."""
    q = xs.shape[1]

    def objective(b):
        return cox_derivatives(b, xs, rs.event_sorted, rs.block_start, need_info=False)[0]

    beta = np.zeros(q)
    ll, score, info = cox_derivatives(beta, xs, rs.event_sorted, rs.block_start)
    iterations = 0
    converged = False
    while True:
        score_norm = float(np.max(np.abs(score)))
        if score_norm < control.tol:
            converged = True
            break
        if iterations >= control.max_iter:
            break
        try:
            low = cholesky_checked(info, "partial-likelihood information")
        except SingularDesign as exc:
            raise SingularInformation(str(exc)) from None
        step = np.linalg.solve(low.T, np.linalg.solve(low, score))
        iterations += 1
        beta, ll, stalled = _halve(objective, beta, step, ll, control)
        ll, score, info = cox_derivatives(beta, xs, rs.event_sorted, rs.block_start)
        if stalled:
            score_norm = float(np.max(np.abs(score)))
            converged = score_norm < control.tol
            break
    separation = bool(np.any(np.abs(beta) > control.separation_bound))
    if separation:
        converged = False
    try:
        low = cholesky_checked(info, "partial-likelihood information")
    except SingularDesign as exc:
        raise SingularInformation(str(exc)) from None
    _warn_condition(info)
    return FitResult(beta=beta, cov=_chol_inverse(low), loglik=ll, iterations=iterations,
                     converged=converged, separation=separation, score_norm=score_norm,
                     family=Family.COX)


def cox_wald_test(fit: FitResult, coef_index: int) -> WaldTest:
    return wald_test(fit, coef_index)

"""Slow, direct reference implementations used only by the tests.

They share no code with the package: plain loops, dense algebra and
derivative-free searches.
"""

import math

import numpy as np
from scipy import integrate, stats


def normal_equations(x, y):
    xtx = x.T @ x
    beta = np.linalg.solve(xtx, x.T @ y)
    resid = y - x @ beta
    n, q = x.shape
    sigma2 = float(resid @ resid) / (n - q)
    return beta, sigma2, sigma2 * np.linalg.inv(xtx)


def newton_glm(x, y, family, offset=None, iters=100):
    """Undamped Newton on the canonical-link log-likelihood from beta = 0."""
    n, q = x.shape
    t = np.ones(n) if offset is None else np.asarray(offset, float)
    beta = np.zeros(q)
    for _ in range(iters):
        eta = x @ beta
        if family == "logistic":
            mu = 1.0 / (1.0 + np.exp(-eta))
            w = mu * (1.0 - mu)
        else:
            mu = t * np.exp(eta)
            w = mu
        score = x.T @ (y - mu)
        info = (x * w[:, None]).T @ x
        step = np.linalg.solve(info, score)
        beta = beta + step
        if np.max(np.abs(step)) < 1e-15:
            break
    eta = x @ beta
    mu = 1.0 / (1.0 + np.exp(-eta)) if family == "logistic" else t * np.exp(eta)
    w = mu * (1.0 - mu) if family == "logistic" else mu
    return beta, np.linalg.inv((x * w[:, None]).T @ x)


def cox_loglik_bruteforce(beta, time, event, x):
    """Breslow log partial likelihood by explicit risk-set loops."""
    x = np.asarray(x, float).reshape(len(time), -1)
    beta = np.atleast_1d(np.asarray(beta, float))
    total = 0.0
    for i in range(len(time)):
        if not event[i]:
            continue
        risk = [j for j in range(len(time)) if time[j] >= time[i]]
        total += float(x[i] @ beta) - math.log(sum(math.exp(float(x[j] @ beta)) for j in risk))
    return total


def golden_max(f, lo, hi, tol=1e-11):
    g = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c, d = b - g * (b - a), a + g * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - g * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + g * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def grid_golden_max(f, lo, hi, points=201):
    """Coarse grid to bracket the maximum, then golden-section refinement."""
    grid = np.linspace(lo, hi, points)
    vals = [f(v) for v in grid]
    i = int(np.argmax(vals))
    return golden_max(f, grid[max(i - 1, 0)], grid[min(i + 1, points - 1)])


def second_difference(f, x, h=1e-4):
    return (f(x + h) - 2.0 * f(x) + f(x - h)) / (h * h)


def central_gradient(f, x, h=1e-6):
    x = np.asarray(x, float)
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def allele_count_correlation(rho, maf_a, maf_b):
    """Correlation of indicator pairs from a thresholded bivariate normal,
    with the orthant probability by 2-D quadrature."""
    a = stats.norm.ppf(1 - maf_a)
    b = stats.norm.ppf(1 - maf_b)
    s = math.sqrt(1 - rho * rho)
    # P(Z1 > a, Z2 > b), Z2 = rho Z1 + s W
    val, _ = integrate.quad(lambda z: stats.norm.pdf(z) * stats.norm.sf((b - rho * z) / s), a, np.inf,
                            epsabs=1e-13, epsrel=1e-12)
    return (val - maf_a * maf_b) / math.sqrt(maf_a * (1 - maf_a) * maf_b * (1 - maf_b))


def weibull_censoring_fraction(shape=2.0, scale=1.0, q0=0.70, q1=0.99):
    """P(C < T) with T ~ Weibull(shape, scale), C ~ U[z_q0, z_q1]."""
    z0 = scale * (-math.log(1 - q0)) ** (1 / shape)
    z1 = scale * (-math.log(1 - q1)) ** (1 / shape)
    val, _ = integrate.quad(lambda c: math.exp(-((c / scale) ** shape)), z0, z1)
    return val / (z1 - z0)

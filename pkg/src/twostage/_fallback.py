"""Pure NumPy implementation of the scan kernel.

Same entry point, arguments and status codes as the compiled
``_kernels.scan_items``.  Grouped GLM items are fitted in vectorised
batches; dense GLM and Cox items fall back to one NumPy fit per item.
"""

from __future__ import annotations

import warnings

import numpy as np

from .cox import RiskSetOrder, cox_newton
from .errors import SingularDesign
from .glm import PIVOT_TOL, ConvergenceControl, Family, _fit_linear, _fit_newton

ST_OK, ST_COLLINEAR, ST_LOWVAR, ST_LOWMAF, ST_SINGULAR, ST_NONCONV, ST_SEPARATION = range(7)
FAM_LINEAR, FAM_LOGISTIC, FAM_POISSON, FAM_COX = range(4)

_CHUNK = 256
_A = np.repeat(np.arange(3.0), 3)  # raw genotype of the first marker in each of 9 cells
_B = np.tile(np.arange(3.0), 3)


def pair_quality_from_counts(cnt9, r2_max, min_var, min_maf):
    """Vectorised quality status for a (k, 9) array of raw genotype-cell counts."""
    f = cnt9 / cnt9.sum(axis=1, keepdims=True)
    c = _A * _B

    def e(v):
        return f @ v

    ea, eb, ec = e(_A), e(_B), e(c)
    va = e(_A * _A) - ea * ea
    vb = e(_B * _B) - eb * eb
    vc = e(c * c) - ec * ec
    cab = e(_A * _B) - ea * eb
    cac = e(_A * c) - ea * ec
    cbc = e(_B * c) - eb * ec
    status = np.full(cnt9.shape[0], ST_OK, dtype=np.int8)
    with np.errstate(invalid="ignore"):
        collinear = ((cab * cab >= r2_max * va * vb) | (cac * cac >= r2_max * va * vc)
                     | (cbc * cbc >= r2_max * vb * vc))
    status[collinear] = ST_COLLINEAR
    status[(ea / 2.0 < min_maf) | (eb / 2.0 < min_maf)] = ST_LOWMAF
    lowvar = ((va < min_var) | (vb < min_var) | (vc < min_var)
              | ~(va > 0) | ~(vb > 0) | ~(vc > 0))
    status[lowvar] = ST_LOWVAR
    return status


def _batched_cholesky(a):
    c, q, _ = a.shape
    low = np.zeros_like(a)
    ok = np.ones(c, dtype=bool)
    for j in range(q):
        d = a[:, j, j]
        s = d - np.sum(low[:, j, :j] ** 2, axis=1)
        ok &= (d > 0) & (s > PIVOT_TOL * d)
        ljj = np.sqrt(np.where(ok, s, 1.0))
        low[:, j, j] = ljj
        for i in range(j + 1, q):
            low[:, i, j] = (a[:, i, j] - np.sum(low[:, i, :j] * low[:, j, :j], axis=1)) / ljj
    return low, ok


def _batched_solve(low, b):
    q = low.shape[1]
    x = b.copy()
    for i in range(q):
        x[:, i] = (x[:, i] - np.sum(low[:, i, :i] * x[:, :i], axis=1)) / low[:, i, i]
    for i in range(q - 1, -1, -1):
        x[:, i] = (x[:, i] - np.sum(low[:, i + 1:, i] * x[:, i + 1:], axis=1)) / low[:, i, i]
    return x


def _softplus(x):
    return np.logaddexp(0.0, x)


class _Cells:
    """Per-cell sufficient statistics for a batch of items."""

    def __init__(self, x, cnt, sy, st, family):
        self.x, self.cnt, self.sy, self.st, self.family = x, cnt, sy, st, family

    def loglik(self, beta, sel):
        eta = np.einsum("crj,cj->cr", self.x[sel], beta)
        if self.family == FAM_LOGISTIC:
            return np.sum(self.sy[sel] * eta - self.cnt[sel] * _softplus(eta), axis=1)
        return np.sum(self.sy[sel] * eta - self.st[sel] * np.exp(eta), axis=1)

    def derivatives(self, beta, sel):
        x = self.x[sel]
        eta = np.einsum("crj,cj->cr", x, beta)
        if self.family == FAM_LOGISTIC:
            mu = 1.0 / (1.0 + np.exp(-eta))
            w = self.cnt[sel] * mu * (1.0 - mu)
            resid = self.sy[sel] - self.cnt[sel] * mu
            ll = np.sum(self.sy[sel] * eta - self.cnt[sel] * _softplus(eta), axis=1)
        else:
            mu = self.st[sel] * np.exp(eta)
            w = mu
            resid = self.sy[sel] - mu
            ll = np.sum(self.sy[sel] * eta - mu, axis=1)
        score = np.einsum("cr,crj->cj", resid, x)
        info = np.einsum("cr,crj,crk->cjk", w, x, x)
        return ll, score, info


def _newton_batch(cells, beta, ctrl, est, se, status, iters):
    c = beta.shape[0]
    q = beta.shape[1]
    active = np.ones(c, dtype=bool)
    converged = np.zeros(c, dtype=bool)
    it = np.zeros(c, dtype=np.int32)
    ll, score, info = cells.derivatives(beta, slice(None))
    done = np.zeros(c, dtype=bool)
    final_info = info.copy()
    while active.any():
        idx = np.flatnonzero(active)
        snorm = np.max(np.abs(score[idx]), axis=1)
        conv = snorm < ctrl.tol
        capped = ~conv & (it[idx] >= ctrl.max_iter)
        converged[idx[conv]] = True
        finish = idx[conv | capped]
        final_info[finish] = info[finish]
        done[finish] = True
        active[finish] = False
        idx = idx[~(conv | capped)]
        if idx.size == 0:
            break
        low, ok = _batched_cholesky(info[idx])
        bad = idx[~ok]
        status[bad] = ST_SINGULAR
        iters[bad] = it[bad]
        active[bad] = False
        idx, low = idx[ok], low[ok]
        if idx.size == 0:
            break
        step = _batched_solve(low, score[idx])
        it[idx] += 1
        scale = np.ones(idx.size)
        accepted = np.zeros(idx.size, dtype=bool)
        stalled = np.zeros(idx.size, dtype=bool)
        new_beta = beta[idx].copy()
        new_ll = ll[idx].copy()
        cur_ll = ll[idx]
        for _ in range(ctrl.max_halvings + 1):
            todo = np.flatnonzero(~accepted)
            if todo.size == 0:
                break
            cand = beta[idx[todo]] + scale[todo, None] * step[todo]
            with np.errstate(over="ignore", invalid="ignore"):
                cll = cells.loglik(cand, idx[todo])
            good = np.isfinite(cll) & (cll >= cur_ll[todo] - ctrl.rel_loglik_tol * np.abs(cur_ll[todo]))
            g = todo[good]
            accepted[g] = True
            new_beta[g] = cand[good]
            new_ll[g] = cll[good]
            stalled[g] = (scale[g] < 1.0) & (
                np.abs(cll[good] - cur_ll[g]) <= ctrl.rel_loglik_tol * np.maximum(np.abs(cur_ll[g]), 1.0))
            scale[todo[~good]] *= 0.5
        stalled |= ~accepted
        beta[idx] = new_beta
        nll, nscore, ninfo = cells.derivatives(beta[idx], idx)
        ll[idx], score[idx], info[idx] = nll, nscore, ninfo
        st_idx = idx[stalled]
        if st_idx.size:
            converged[st_idx] = np.max(np.abs(score[st_idx]), axis=1) < ctrl.tol
            final_info[st_idx] = info[st_idx]
            done[st_idx] = True
            active[st_idx] = False
    fin = np.flatnonzero(done)
    iters[fin] = it[fin]
    if fin.size == 0:
        return
    low, ok = _batched_cholesky(final_info[fin])
    status[fin[~ok]] = ST_SINGULAR
    fin, low = fin[ok], low[ok]
    est[fin] = beta[fin, q - 1]
    se[fin] = 1.0 / low[:, q - 1, q - 1]
    sep = np.any(np.abs(beta[fin]) > ctrl.separation_bound, axis=1)
    status[fin] = np.where(sep, ST_SEPARATION, np.where(converged[fin], ST_OK, ST_NONCONV))


def _grouped(gt, levels, items, family, y, offsets, quality, ctrl, est, se, status, iters):
    n = gt.shape[1]
    pair = items[0, 1] >= 0
    ncell = 9 if pair else 3
    c = items.shape[0]
    k, l = items[:, 0], items[:, 1]
    gk = gt[k].astype(np.intp)
    cell = gk * 3 + gt[l] if pair else gk
    flat = (cell + ncell * np.arange(c)[:, None]).ravel()

    def cellsum(weights=None):
        w = None if weights is None else np.broadcast_to(weights, (c, n)).ravel()
        return np.bincount(flat, weights=w, minlength=c * ncell).reshape(c, ncell).astype(float)

    cnt = cellsum()
    sy = cellsum(y)
    check = quality is not None and pair
    if check:
        status[:] = pair_quality_from_counts(cnt, *quality)
    todo = np.flatnonzero(status == ST_OK)
    if todo.size == 0:
        return
    q = 4 if pair else 2
    ca = np.repeat(np.arange(3), 3) if pair else np.arange(3)
    x = np.empty((todo.size, ncell, q))
    x[:, :, 0] = 1.0
    x[:, :, 1] = levels[k[todo]][:, ca]
    if pair:
        cb = np.tile(np.arange(3), 3)
        x[:, :, 2] = levels[l[todo]][:, cb]
        x[:, :, 3] = x[:, :, 1] * x[:, :, 2]
    cnt, sy = cnt[todo], sy[todo]
    if family == FAM_LINEAR:
        syy = cellsum(y * y)[todo]
        nonempty = cnt > 0
        ybar = np.where(nonempty, sy / np.where(nonempty, cnt, 1.0), 0.0)
        ssw = np.sum(np.where(nonempty, syy - sy * ybar, 0.0), axis=1)
        a = np.einsum("cr,crj,crk->cjk", cnt, x, x)
        b = np.einsum("cr,crj->cj", sy, x)
        low, ok = _batched_cholesky(a)
        iters[todo] = 1
        status[todo[~ok]] = ST_SINGULAR
        good = np.flatnonzero(ok)
        beta = _batched_solve(low[good], b[good])
        fitted = np.einsum("crj,cj->cr", x[good], beta)
        rss = ssw[good] + np.sum(cnt[good] * (ybar[good] - fitted) ** 2, axis=1)
        sigma2 = rss / (n - q)
        est[todo[good]] = beta[:, q - 1]
        se[todo[good]] = np.sqrt(sigma2) / low[good, q - 1, q - 1]
        return
    st = cellsum(offsets)[todo] if family == FAM_POISSON else np.zeros_like(cnt)
    cells = _Cells(x, cnt, sy, st, family)
    beta = np.zeros((todo.size, q))
    tot_n, tot_y, tot_t = cnt.sum(axis=1), sy.sum(axis=1), st.sum(axis=1)
    if family == FAM_LOGISTIC:
        okb = (tot_y > 0) & (tot_y < tot_n)
        pbar = np.where(okb, tot_y / tot_n, 0.5)
        beta[:, 0] = np.where(okb, np.log(pbar / (1.0 - pbar)), 0.0)
    else:
        okb = tot_y > 0
        beta[:, 0] = np.where(okb, np.log(np.where(okb, tot_y, 1.0) / tot_t), 0.0)
    e = np.full(todo.size, np.nan)
    s = np.full(todo.size, np.nan)
    stt = np.zeros(todo.size, dtype=np.int8)
    it = np.zeros(todo.size, dtype=np.int32)
    _newton_batch(cells, beta, ctrl, e, s, stt, it)
    est[todo], se[todo], status[todo], iters[todo] = e, s, stt, it


def _dense(gt, levels, items, family, y, offsets, fixed, order, block_start, event_sorted,
           quality, ctrl, est, se, status, iters):
    fam = Family.parse(("linear", "logistic", "poisson", "cox")[family])
    n = gt.shape[1]
    rs = None
    if family == FAM_COX:
        rs = RiskSetOrder(order=np.asarray(order), block_start=np.asarray(block_start),
                          event_sorted=np.asarray(event_sorted))
    for it, (k, l) in enumerate(items):
        pair = l >= 0
        if pair and quality is not None:
            cnt = np.bincount(gt[k].astype(np.intp) * 3 + gt[l], minlength=9).astype(float)
            stq = pair_quality_from_counts(cnt[None, :], *quality)[0]
            if stq != ST_OK:
                status[it] = stq
                continue
        gk = gt[k] if rs is None else gt[k][rs.order]
        cols = [levels[k][gk]]
        if pair:
            gl = gt[l] if rs is None else gt[l][rs.order]
            cols += [levels[l][gl], levels[k][gk] * levels[l][gl]]
        parts = ([] if family == FAM_COX else [np.ones((n, 1))]) + [fixed, np.column_stack(cols)]
        x = np.hstack(parts)
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                if family == FAM_COX:
                    fit = cox_newton(x, rs, ctrl)
                elif family == FAM_LINEAR:
                    fit = _fit_linear(x, y)
                else:
                    fit = _fit_newton(x, y, fam, offsets if family == FAM_POISSON else None, ctrl)
        except SingularDesign:
            status[it] = ST_SINGULAR
            continue
        iters[it] = fit.iterations
        est[it] = fit.beta[-1]
        se[it] = np.sqrt(fit.cov[-1, -1])
        status[it] = ST_SEPARATION if fit.separation else (ST_OK if fit.converged else ST_NONCONV)


def scan_items(gt, levels, items, family, y, offsets, fixed, order, block_start, event_sorted,
               r2_max, min_var, min_maf, check_quality,
               tol, rel_tol, max_iter, max_halvings, sep_bound,
               est, se, status, iters):
    """See ``_kernels.scan_items``; outputs are written in place."""
    gt = np.asarray(gt)
    levels = np.asarray(levels)
    items = np.asarray(items)
    y = np.asarray(y)
    offsets = np.asarray(offsets)
    fixed = np.asarray(fixed)
    ctrl = ConvergenceControl(tol=tol, rel_loglik_tol=rel_tol, max_iter=max_iter,
                              max_halvings=max_halvings, separation_bound=sep_bound)
    quality = (r2_max, min_var, min_maf) if check_quality else None
    est[:] = np.nan
    se[:] = np.nan
    status[:] = ST_OK
    iters[:] = 0
    if items.shape[0] == 0:
        return
    grouped = family != FAM_COX and fixed.shape[1] == 0
    for pair in (True, False):
        sel = np.flatnonzero((items[:, 1] >= 0) == pair)
        for start in range(0, sel.size, _CHUNK):
            part = sel[start:start + _CHUNK]
            e, s = np.full(part.size, np.nan), np.full(part.size, np.nan)
            stt = np.zeros(part.size, dtype=np.int8)
            it = np.zeros(part.size, dtype=np.int32)
            if grouped:
                _grouped(gt, levels, items[part], family, y, offsets, quality, ctrl, e, s, stt, it)
            else:
                _dense(gt, levels, items[part], family, y, offsets, fixed, order, block_start,
                       event_sorted, quality, ctrl, e, s, stt, it)
            est[part], se[part], status[part], iters[part] = e, s, stt, it

# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled scan kernel: one small regression fit per (marker) or (marker pair) item.

Without fixed covariates a GLM design row depends only on the genotype
cell (3 cells for one marker, 9 for a pair), so the fit runs on per-cell
sufficient statistics.  Otherwise, and always for the Cox model, the
design is materialised row by row.  Everything below the Python entry
point runs without the GIL.
"""

from libc.math cimport exp, log, sqrt, fabs, log1p, NAN, INFINITY
from libc.stdlib cimport malloc, free

cdef enum:
    MAXQ = 32

    ST_OK = 0
    ST_COLLINEAR = 1
    ST_LOWVAR = 2
    ST_LOWMAF = 3
    ST_SINGULAR = 4
    ST_NONCONV = 5
    ST_SEPARATION = 6

    FAM_LINEAR = 0
    FAM_LOGISTIC = 1
    FAM_POISSON = 2
    FAM_COX = 3

cdef double PIVOT_TOL = 1e-12


cdef struct Problem:
    int family
    int nrow
    int q
    double* X        # nrow x q, row-major
    double* cnt      # observations per row (1 for dense rows)
    double* sy       # summed response per row
    double* st       # summed exposure per row (Poisson)
    unsigned char* ev
    long long* bstart
    int nblock


cdef struct Control:
    double tol
    double rel_tol
    int max_iter
    int max_halvings
    double sep_bound


cdef inline double softplus(double x) noexcept nogil:
    if x > 0:
        return x + log1p(exp(-x))
    return log1p(exp(x))


cdef int cholesky(double* a, int q) noexcept nogil:
    """In-place lower Cholesky factor of a (row-major); 0 on success."""
    cdef int i, j, k
    cdef double s, d
    for j in range(q):
        d = a[j * q + j]
        if not (d > 0.0):
            return -1
        s = d
        for k in range(j):
            s -= a[j * q + k] * a[j * q + k]
        if not (s > PIVOT_TOL * d):
            return -1
        s = sqrt(s)
        a[j * q + j] = s
        for i in range(j + 1, q):
            d = a[i * q + j]
            for k in range(j):
                d -= a[i * q + k] * a[j * q + k]
            a[i * q + j] = d / s
    return 0


cdef void chol_solve(double* low, int q, double* b) noexcept nogil:
    cdef int i, k
    cdef double s
    for i in range(q):
        s = b[i]
        for k in range(i):
            s -= low[i * q + k] * b[k]
        b[i] = s / low[i * q + i]
    for i in range(q - 1, -1, -1):
        s = b[i]
        for k in range(i + 1, q):
            s -= low[k * q + i] * b[k]
        b[i] = s / low[i * q + i]


cdef double glm_eval(Problem* p, double* beta, double* score, double* info, bint need) noexcept nogil:
    """Log-likelihood (up to constants), score and information of a logistic/Poisson fit."""
    cdef int r, j, k, q = p.q
    cdef double eta, mu, w, resid, ll = 0.0
    cdef double* x
    if need:
        for j in range(q):
            score[j] = 0.0
        for j in range(q * q):
            info[j] = 0.0
    for r in range(p.nrow):
        x = p.X + r * q
        eta = 0.0
        for j in range(q):
            eta += x[j] * beta[j]
        if p.family == FAM_LOGISTIC:
            ll += p.sy[r] * eta - p.cnt[r] * softplus(eta)
            if need:
                if eta >= 0:
                    mu = 1.0 / (1.0 + exp(-eta))
                else:
                    mu = exp(eta) / (1.0 + exp(eta))
                w = p.cnt[r] * mu * (1.0 - mu)
                resid = p.sy[r] - p.cnt[r] * mu
        else:
            mu = p.st[r] * exp(eta)
            ll += p.sy[r] * eta - mu
            if need:
                w = mu
                resid = p.sy[r] - mu
        if need:
            for j in range(q):
                score[j] += resid * x[j]
                for k in range(j + 1):
                    info[j * q + k] += w * x[j] * x[k]
    if need:
        for j in range(q):
            for k in range(j + 1, q):
                info[j * q + k] = info[k * q + j]
    return ll


cdef double cox_eval(Problem* p, double* beta, double* score, double* info, bint need) noexcept nogil:
    """Breslow log partial likelihood on rows sorted by time, accumulated backwards by tie block."""
    cdef int r, j, k, b, start, stop, nev, q = p.q
    cdef double s0 = 0.0, shift = -INFINITY, ll = 0.0, w, logs0
    cdef double s1[MAXQ]
    cdef double s2[MAXQ * MAXQ]
    cdef double m[MAXQ]
    cdef double sum_ev_eta
    cdef double* x
    cdef double* eta = <double*> malloc(p.nrow * sizeof(double))
    cdef double* xsum = <double*> malloc(q * sizeof(double) + 1)
    for r in range(p.nrow):
        x = p.X + r * q
        w = 0.0
        for j in range(q):
            w += x[j] * beta[j]
        eta[r] = w
        if w > shift:
            shift = w
    for j in range(q):
        s1[j] = 0.0
        if need:
            score[j] = 0.0
        for k in range(q):
            s2[j * q + k] = 0.0
            if need:
                info[j * q + k] = 0.0
    for b in range(p.nblock - 1, -1, -1):
        start = p.bstart[b]
        stop = p.bstart[b + 1] if b + 1 < p.nblock else p.nrow
        nev = 0
        sum_ev_eta = 0.0
        for j in range(q):
            xsum[j] = 0.0
        for r in range(start, stop):
            x = p.X + r * q
            w = exp(eta[r] - shift)
            s0 += w
            for j in range(q):
                s1[j] += w * x[j]
                if need:
                    for k in range(j + 1):
                        s2[j * q + k] += w * x[j] * x[k]
            if p.ev[r]:
                nev += 1
                sum_ev_eta += eta[r]
                for j in range(q):
                    xsum[j] += x[j]
        if nev == 0:
            continue
        logs0 = log(s0) + shift
        ll += sum_ev_eta - nev * logs0
        if need:
            for j in range(q):
                m[j] = s1[j] / s0
                score[j] += xsum[j] - nev * m[j]
            for j in range(q):
                for k in range(j + 1):
                    info[j * q + k] += nev * (s2[j * q + k] / s0 - m[j] * m[k])
    if need:
        for j in range(q):
            for k in range(j + 1, q):
                info[j * q + k] = info[k * q + j]
    free(eta)
    free(xsum)
    return ll


cdef inline double evaluate(Problem* p, double* beta, double* score, double* info, bint need) noexcept nogil:
    if p.family == FAM_COX:
        return cox_eval(p, beta, score, info, need)
    return glm_eval(p, beta, score, info, need)


cdef int newton(Problem* p, Control* c, double* beta, double* est, double* var, int* iters) noexcept nogil:
    """Newton-Raphson with step-halving; reports the last coefficient and its variance."""
    cdef int q = p.q, j, it = 0, h
    cdef double score[MAXQ]
    cdef double info[MAXQ * MAXQ]
    cdef double step[MAXQ]
    cdef double cand[MAXQ]
    cdef double ll, cand_ll, scale, snorm
    cdef bint converged = False, stalled, accepted
    ll = evaluate(p, beta, score, info, True)
    while True:
        snorm = 0.0
        for j in range(q):
            if fabs(score[j]) > snorm:
                snorm = fabs(score[j])
        if snorm < c.tol:
            converged = True
            break
        if it >= c.max_iter:
            break
        if cholesky(info, q) != 0:
            iters[0] = it
            return ST_SINGULAR
        for j in range(q):
            step[j] = score[j]
        chol_solve(info, q, step)
        it += 1
        scale = 1.0
        accepted = False
        stalled = False
        for h in range(c.max_halvings + 1):
            for j in range(q):
                cand[j] = beta[j] + scale * step[j]
            cand_ll = evaluate(p, cand, score, info, False)
            if cand_ll == cand_ll and cand_ll > -INFINITY and cand_ll >= ll - c.rel_tol * fabs(ll):
                accepted = True
                stalled = scale < 1.0 and fabs(cand_ll - ll) <= c.rel_tol * (fabs(ll) if fabs(ll) > 1.0 else 1.0)
                break
            scale *= 0.5
        if accepted:
            for j in range(q):
                beta[j] = cand[j]
            ll = cand_ll
        else:
            stalled = True
        ll = evaluate(p, beta, score, info, True)
        if stalled:
            snorm = 0.0
            for j in range(q):
                if fabs(score[j]) > snorm:
                    snorm = fabs(score[j])
            converged = snorm < c.tol
            break
    iters[0] = it
    if cholesky(info, q) != 0:
        return ST_SINGULAR
    est[0] = beta[q - 1]
    var[0] = 1.0 / (info[(q - 1) * q + (q - 1)] * info[(q - 1) * q + (q - 1)])
    for j in range(q):
        if fabs(beta[j]) > c.sep_bound:
            return ST_SEPARATION
    if not converged:
        return ST_NONCONV
    return ST_OK


cdef int linear_fit(Problem* p, double ssw, double nobs, double* est, double* se) noexcept nogil:
    """Weighted normal equations; residual variance uses the n - q divisor."""
    cdef int r, j, k, q = p.q
    cdef double a[MAXQ * MAXQ]
    cdef double b[MAXQ]
    cdef double rss = ssw, fit, d, sigma2
    cdef double* x
    for j in range(q):
        b[j] = 0.0
        for k in range(q):
            a[j * q + k] = 0.0
    for r in range(p.nrow):
        x = p.X + r * q
        for j in range(q):
            b[j] += p.sy[r] * x[j]
            for k in range(j + 1):
                a[j * q + k] += p.cnt[r] * x[j] * x[k]
    for j in range(q):
        for k in range(j + 1, q):
            a[j * q + k] = a[k * q + j]
    if cholesky(a, q) != 0:
        return ST_SINGULAR
    chol_solve(a, q, b)
    for r in range(p.nrow):
        x = p.X + r * q
        fit = 0.0
        for j in range(q):
            fit += x[j] * b[j]
        d = p.sy[r] / p.cnt[r] - fit
        rss += p.cnt[r] * d * d
    if nobs - q <= 0:
        return ST_SINGULAR
    sigma2 = rss / (nobs - q)
    est[0] = b[q - 1]
    d = a[(q - 1) * q + (q - 1)]
    se[0] = sqrt(sigma2) / d
    return ST_OK


cdef int pair_quality(double* cnt9, double n, double r2_max, double min_var, double min_maf) noexcept nogil:
    """Quality of a marker pair from its 3x3 table of raw genotype counts."""
    cdef int a, b
    cdef double f, ea = 0, eb = 0, ec = 0, eaa = 0, ebb = 0, ecc = 0, eab = 0, eac = 0, ebc = 0
    cdef double va, vb, vc, cab, cac, cbc, c
    for a in range(3):
        for b in range(3):
            f = cnt9[a * 3 + b] / n
            c = a * b
            ea += f * a
            eb += f * b
            ec += f * c
            eaa += f * a * a
            ebb += f * b * b
            ecc += f * c * c
            eab += f * a * b
            eac += f * a * c
            ebc += f * b * c
    va = eaa - ea * ea
    vb = ebb - eb * eb
    vc = ecc - ec * ec
    if va < min_var or vb < min_var or vc < min_var or not (va > 0) or not (vb > 0) or not (vc > 0):
        return ST_LOWVAR
    if ea / 2.0 < min_maf or eb / 2.0 < min_maf:
        return ST_LOWMAF
    cab = eab - ea * eb
    cac = eac - ea * ec
    cbc = ebc - eb * ec
    if cab * cab >= r2_max * va * vb or cac * cac >= r2_max * va * vc or cbc * cbc >= r2_max * vb * vc:
        return ST_COLLINEAR
    return ST_OK


def scan_items(const unsigned char[:, ::1] gt,
               const double[:, ::1] levels,
               const long long[:, ::1] items,
               int family,
               const double[::1] y,
               const double[::1] offsets,
               const double[:, ::1] fixed,
               const long long[::1] order,
               const long long[::1] block_start,
               const unsigned char[::1] event_sorted,
               double r2_max, double min_var, double min_maf, bint check_quality,
               double tol, double rel_tol, int max_iter, int max_halvings, double sep_bound,
               double[::1] est, double[::1] se, signed char[::1] status, int[::1] iters):
    """Fit every item and write the tested coefficient, its SE and a status code.

    ``items[i] = (k, l)`` tests the interaction of markers k and l; with
    ``l < 0`` it tests marker k alone.  For the Cox family ``fixed`` and
    ``event_sorted`` are already in risk-set order and ``order`` maps
    sorted positions back to subjects.
    """
    cdef Py_ssize_t n = gt.shape[1]
    cdef int m = fixed.shape[1]
    cdef Py_ssize_t nitem = items.shape[0]
    cdef Py_ssize_t it, i, s
    cdef long long k, l
    cdef int j, a, b, cell, q, row, nrow, st, intercept, qmax
    cdef bint pair, grouped
    cdef double cnt9[9]
    cdef double sy9[9]
    cdef double syy9[9]
    cdef double st9[9]
    cdef double cellX[9 * MAXQ]
    cdef double ccnt[9]
    cdef double csy[9]
    cdef double cst[9]
    cdef double beta[MAXQ]
    cdef double ssw, tot_n, tot_y, tot_t, e, sd
    cdef double* dense_x = NULL
    cdef double* ones = NULL
    cdef Problem prob
    cdef Control ctl
    cdef double* yp = NULL
    cdef double* op = NULL

    if nitem == 0:
        return
    intercept = 0 if family == FAM_COX else 1
    qmax = intercept + m + 3
    if qmax > MAXQ:
        raise ValueError(f"too many covariates for the compiled kernel (max {MAXQ - 4} fixed)")
    if y.shape[0] > 0:
        yp = <double*> &y[0]
    if offsets.shape[0] > 0:
        op = <double*> &offsets[0]
    ctl.tol = tol
    ctl.rel_tol = rel_tol
    ctl.max_iter = max_iter
    ctl.max_halvings = max_halvings
    ctl.sep_bound = sep_bound
    grouped = family != FAM_COX and m == 0

    with nogil:
        if not grouped:
            dense_x = <double*> malloc(n * qmax * sizeof(double))
            ones = <double*> malloc(n * sizeof(double))
            for i in range(n):
                ones[i] = 1.0
        for it in range(nitem):
            k = items[it, 0]
            l = items[it, 1]
            pair = l >= 0
            est[it] = NAN
            se[it] = NAN
            iters[it] = 0
            for cell in range(9):
                cnt9[cell] = 0.0
                sy9[cell] = 0.0
                syy9[cell] = 0.0
                st9[cell] = 0.0
            if grouped:
                for i in range(n):
                    a = gt[k, i]
                    cell = a * 3 + gt[l, i] if pair else a
                    cnt9[cell] += 1.0
                    sy9[cell] += y[i]
                    if family == FAM_LINEAR:
                        syy9[cell] += y[i] * y[i]
                    elif family == FAM_POISSON:
                        st9[cell] += offsets[i]
            elif pair and check_quality:
                for i in range(n):
                    cnt9[gt[k, i] * 3 + gt[l, i]] += 1.0
            if pair and check_quality:
                st = pair_quality(cnt9, <double> n, r2_max, min_var, min_maf)
                if st != ST_OK:
                    status[it] = st
                    continue

            q = intercept + m + (3 if pair else 1)
            prob.family = family
            prob.q = q
            prob.ev = NULL
            prob.bstart = NULL
            prob.nblock = 0
            if grouped:
                nrow = 0
                ssw = 0.0
                for cell in range(9 if pair else 3):
                    if cnt9[cell] == 0.0:
                        continue
                    a = cell // 3 if pair else cell
                    b = cell % 3
                    cellX[nrow * q + 0] = 1.0
                    cellX[nrow * q + 1] = levels[k, a]
                    if pair:
                        cellX[nrow * q + 2] = levels[l, b]
                        cellX[nrow * q + 3] = levels[k, a] * levels[l, b]
                    ccnt[nrow] = cnt9[cell]
                    csy[nrow] = sy9[cell]
                    cst[nrow] = st9[cell]
                    if family == FAM_LINEAR:
                        ssw += syy9[cell] - sy9[cell] * sy9[cell] / cnt9[cell]
                    nrow += 1
                prob.nrow = nrow
                prob.X = cellX
                prob.cnt = ccnt
                prob.sy = csy
                prob.st = cst
            else:
                for s in range(n):
                    i = order[s] if family == FAM_COX else s
                    row = 0
                    if intercept:
                        dense_x[s * q] = 1.0
                        row = 1
                    for j in range(m):
                        dense_x[s * q + row + j] = fixed[s, j]
                    row += m
                    dense_x[s * q + row] = levels[k, gt[k, i]]
                    if pair:
                        dense_x[s * q + row + 1] = levels[l, gt[l, i]]
                        dense_x[s * q + row + 2] = levels[k, gt[k, i]] * levels[l, gt[l, i]]
                prob.nrow = <int> n
                prob.X = dense_x
                prob.cnt = ones
                prob.sy = yp
                prob.st = op
                ssw = 0.0
                if family == FAM_COX:
                    prob.ev = <unsigned char*> &event_sorted[0]
                    prob.bstart = <long long*> &block_start[0]
                    prob.nblock = <int> block_start.shape[0]

            if family == FAM_LINEAR:
                st = linear_fit(&prob, ssw, <double> n, &est[it], &se[it])
                iters[it] = 1
            else:
                for j in range(q):
                    beta[j] = 0.0
                if intercept:
                    tot_n = 0.0
                    tot_y = 0.0
                    tot_t = 0.0
                    for row in range(prob.nrow):
                        tot_n += prob.cnt[row]
                        tot_y += prob.sy[row]
                        if family == FAM_POISSON:
                            tot_t += prob.st[row]
                    if family == FAM_LOGISTIC and tot_y > 0 and tot_y < tot_n:
                        beta[0] = log((tot_y / tot_n) / (1.0 - tot_y / tot_n))
                    elif family == FAM_POISSON and tot_y > 0:
                        beta[0] = log(tot_y / tot_t)
                st = newton(&prob, &ctl, beta, &est[it], &sd, &iters[it])
                if st == ST_OK or st == ST_NONCONV or st == ST_SEPARATION:
                    se[it] = sqrt(sd) if sd > 0 else NAN
            status[it] = st
        if dense_x != NULL:
            free(dense_x)
        if ones != NULL:
            free(ones)

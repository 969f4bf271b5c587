"""Compiled inner loops: the log-MGF term, block objectives and the solver.

All block objectives are written for maximisation and return (value, grad).
Variances sigma^2 and lambda^2 enter only through d = 1 - sigma^2 lambda^2,
which must stay positive; a nonpositive d turns the value into nan.
"""

import math

import numba as nb
import numpy as np

from .special import digamma_scalar, log_beta_scalar, trigamma_scalar

NEG_INF = -np.inf

STATUS_CONVERGED = 0
STATUS_MAX_ITER = 1
STATUS_LINE_SEARCH = 2
STATUS_NONFINITE = 3

ARMIJO_C = 1e-4
MAX_HALVINGS = 40
NOISE_REL = 1e-13


@nb.njit(cache=True)
def log_mgf(m, s2, r, l2):
    """log E[exp(f.b)] for f ~ N(m, diag s2), b ~ N(r, diag l2)."""
    out = 0.0
    for l in range(m.shape[0]):
        d = 1.0 - s2[l] * l2[l]
        if d <= 0.0:
            return np.nan
        out += -0.5 * math.log(d) + (
            s2[l] * r[l] * r[l] + l2[l] * m[l] * m[l] + 2.0 * m[l] * r[l]
        ) / (2.0 * d)
    return out


@nb.njit(cache=True)
def mgf_matrix(m, s2, r, l2):
    n, p = m.shape[0], r.shape[0]
    out = np.empty((n, p))
    for i in range(n):
        for j in range(p):
            out[i, j] = log_mgf(m[i], s2[i], r[j], l2[j])
    return out


@nb.njit(cache=True)
def logaddexp(a, b):
    if a == NEG_INF:
        return b
    if b == NEG_INF:
        return a
    if a > b:
        return a + math.log1p(math.exp(b - a))
    return b + math.log1p(math.exp(a - b))


@nb.njit(cache=True)
def log_weights(pi, beta0, L):
    """log[(1 - pi_ij) exp(beta0_j + L_ij)], -inf where pi_ij = 1."""
    n, p = L.shape
    out = np.empty((n, p))
    for i in range(n):
        for j in range(p):
            if pi[i, j] >= 1.0:
                out[i, j] = NEG_INF
            else:
                out[i, j] = math.log1p(-pi[i, j]) + beta0[j] + L[i, j]
    return out


@nb.njit(cache=True)
def row_logsumexp(A):
    n, p = A.shape
    out = np.empty(n)
    for i in range(n):
        top = NEG_INF
        for j in range(p):
            if A[i, j] > top:
                top = A[i, j]
        if top == NEG_INF:
            out[i] = NEG_INF
            continue
        s = 0.0
        for j in range(p):
            s += math.exp(A[i, j] - top)
        out[i] = top + math.log(s)
    return out


@nb.njit(cache=True)
def rest_logsumexp(A, j):
    """Row-wise log-sum-exp of A with column j left out."""
    n, p = A.shape
    out = np.empty(n)
    for i in range(n):
        top = NEG_INF
        for l in range(p):
            if l != j and A[i, l] > top:
                top = A[i, l]
        if top == NEG_INF:
            out[i] = NEG_INF
            continue
        s = 0.0
        for l in range(p):
            if l != j:
                s += math.exp(A[i, l] - top)
        out[i] = top + math.log(s)
    return out


# ---------------------------------------------------------------------------
# block objectives


@nb.njit(cache=True)
def gamma1_vg(x, pi_col, gamma2, alpha1, alpha2):
    g1 = x[0]
    s = g1 + gamma2
    psi1, psis = digamma_scalar(g1), digamma_scalar(s)
    tri1, tris = trigamma_scalar(g1), trigamma_scalar(s)
    val = 0.0
    grad = 0.0
    for i in range(pi_col.shape[0]):
        val += pi_col[i] * (psi1 - psis) - (1.0 - pi_col[i]) * psis
        grad += pi_col[i] * (tri1 - tris) - (1.0 - pi_col[i]) * tris
    val += (alpha1 - g1) * (psi1 - psis) - (alpha2 - gamma2) * psis
    val += log_beta_scalar(g1, gamma2)
    grad += (alpha1 - g1) * (tri1 - tris) - (alpha2 - gamma2) * tris
    g = np.empty(1)
    g[0] = grad
    return val, g


@nb.njit(cache=True)
def gamma2_vg(x, pi_col, gamma1, alpha1, alpha2):
    g2 = x[0]
    s = gamma1 + g2
    psi2, psis = digamma_scalar(g2), digamma_scalar(s)
    tri2, tris = trigamma_scalar(g2), trigamma_scalar(s)
    val = 0.0
    grad = 0.0
    for i in range(pi_col.shape[0]):
        val += -pi_col[i] * psis + (1.0 - pi_col[i]) * (psi2 - psis)
        grad += -pi_col[i] * tris + (1.0 - pi_col[i]) * (tri2 - tris)
    val += (alpha2 - g2) * (psi2 - psis) - (alpha1 - gamma1) * psis
    val += log_beta_scalar(gamma1, g2)
    grad += (alpha2 - g2) * (tri2 - tris) - (alpha1 - gamma1) * tris
    g = np.empty(1)
    g[0] = grad
    return val, g


@nb.njit(cache=True)
def r_vg(x, x_col, M, pi_col, beta0_j, m, s2, l2_j, sigma_beta, log_rest):
    """Loading-mean block r_j. T_ij = (m_i + s2_i r_j) / d elementwise."""
    n, k = m.shape
    val = 0.0
    g = np.zeros(k)
    logdet = 0.0
    for l in range(k):
        val -= 0.5 * (x[l] * x[l] + l2_j[l]) / sigma_beta[l]
        logdet += math.log(l2_j[l])
        g[l] = -x[l] / sigma_beta[l]
    val += 0.5 * logdet
    for i in range(n):
        for l in range(k):
            val += x_col[i] * x[l] * m[i, l]
            g[l] += x_col[i] * m[i, l]
        if pi_col[i] >= 1.0:
            lw = NEG_INF
        else:
            L = log_mgf(m[i], s2[i], x, l2_j)
            if not math.isfinite(L):
                return np.nan, g
            lw = math.log1p(-pi_col[i]) + beta0_j + L
        ls = logaddexp(log_rest[i], lw)
        val -= M[i] * ls
        if lw == NEG_INF:
            continue
        w = math.exp(lw - ls)
        for l in range(k):
            d = 1.0 - s2[i, l] * l2_j[l]
            g[l] -= M[i] * w * (m[i, l] + s2[i, l] * x[l]) / d
    return val, g


@nb.njit(cache=True)
def lambda2_vg(x, M, pi_col, beta0_j, m, s2, r_j, sigma_beta, log_rest):
    """Loading-variance block. W_ij = s2/d + (m + s2 r)^2 / d^2 elementwise."""
    n, k = m.shape
    val = 0.0
    g = np.zeros(k)
    for l in range(k):
        val -= 0.5 * (x[l] / sigma_beta[l] - math.log(x[l]))
        g[l] = -0.5 * (1.0 / sigma_beta[l] - 1.0 / x[l])
    for i in range(n):
        if pi_col[i] >= 1.0:
            lw = NEG_INF
        else:
            L = log_mgf(m[i], s2[i], r_j, x)
            if not math.isfinite(L):
                return np.nan, g
            lw = math.log1p(-pi_col[i]) + beta0_j + L
        ls = logaddexp(log_rest[i], lw)
        val -= M[i] * ls
        if lw == NEG_INF:
            continue
        w = math.exp(lw - ls)
        for l in range(k):
            d = 1.0 - s2[i, l] * x[l]
            W = s2[i, l] / d + (
                m[i, l] * m[i, l]
                + s2[i, l] * (2.0 * m[i, l] * r_j[l] + s2[i, l] * r_j[l] * r_j[l])
            ) / (d * d)
            g[l] -= 0.5 * M[i] * w * W
    return val, g


@nb.njit(cache=True)
def _row_weights(mi, s2i, pi_row, beta0, r, l2):
    p = r.shape[0]
    lw = np.empty(p)
    for j in range(p):
        if pi_row[j] >= 1.0:
            lw[j] = NEG_INF
        else:
            L = log_mgf(mi, s2i, r[j], l2[j])
            if not math.isfinite(L):
                lw[0] = np.nan
                return lw
            lw[j] = math.log1p(-pi_row[j]) + beta0[j] + L
    return lw


@nb.njit(cache=True)
def _normalise(lw):
    top = NEG_INF
    for j in range(lw.shape[0]):
        if lw[j] > top:
            top = lw[j]
    s = 0.0
    for j in range(lw.shape[0]):
        s += math.exp(lw[j] - top)
    ls = top + math.log(s)
    w = np.empty(lw.shape[0])
    for j in range(lw.shape[0]):
        w[j] = math.exp(lw[j] - ls)
    return ls, w


@nb.njit(cache=True)
def m_vg(x, x_row, M_i, pi_row, beta0, r, l2, s2_i):
    """Factor-mean block. U_ij = (r_j + l2_j m_i) / d elementwise."""
    p, k = r.shape
    val = 0.0
    g = np.zeros(k)
    for l in range(k):
        val -= 0.5 * (x[l] * x[l] + s2_i[l] - math.log(s2_i[l]))
        g[l] = -x[l]
    for j in range(p):
        for l in range(k):
            val += x_row[j] * x[l] * r[j, l]
            g[l] += x_row[j] * r[j, l]
    lw = _row_weights(x, s2_i, pi_row, beta0, r, l2)
    if not math.isfinite(lw[0]) and lw[0] != NEG_INF:
        return np.nan, g
    ls, w = _normalise(lw)
    val -= M_i * ls
    for j in range(p):
        if w[j] == 0.0:
            continue
        for l in range(k):
            d = 1.0 - s2_i[l] * l2[j, l]
            g[l] -= M_i * w[j] * (r[j, l] + l2[j, l] * x[l]) / d
    return val, g


@nb.njit(cache=True)
def sigma2_vg(x, M_i, pi_row, beta0, r, l2, m_i):
    """Factor-variance block. S_ij = l2/d + (r + l2 m)^2 / d^2 elementwise."""
    p, k = r.shape
    val = 0.0
    g = np.zeros(k)
    for l in range(k):
        val -= 0.5 * (x[l] - math.log(x[l]))
        g[l] = -0.5 * (1.0 - 1.0 / x[l])
    lw = _row_weights(m_i, x, pi_row, beta0, r, l2)
    if not math.isfinite(lw[0]) and lw[0] != NEG_INF:
        return np.nan, g
    ls, w = _normalise(lw)
    val -= M_i * ls
    for j in range(p):
        if w[j] == 0.0:
            continue
        for l in range(k):
            d = 1.0 - x[l] * l2[j, l]
            u = r[j, l] + l2[j, l] * m_i[l]
            g[l] -= 0.5 * M_i * w[j] * (l2[j, l] / d + u * u / (d * d))
    return val, g


@nb.njit(cache=True)
def beta0_vg(x, colsum, M, logw0):
    """Intercepts, all p jointly. logw0 = log(1 - pi) + L (no intercept)."""
    n, p = logw0.shape
    val = 0.0
    g = np.empty(p)
    for j in range(p):
        val += colsum[j] * x[j]
        g[j] = colsum[j]
    lw = np.empty(p)
    for i in range(n):
        for j in range(p):
            lw[j] = logw0[i, j] + x[j]
        ls, w = _normalise(lw)
        val -= M[i] * ls
        for j in range(p):
            g[j] -= M[i] * w[j]
    return val, g


# ---------------------------------------------------------------------------
# dispatch over block kinds

VAR_LO = 1e-8
VAR_HI = 1.0 - 1e-8
GAMMA_LO = 1e-6
GAMMA_HI = 1e300

BLOCK_GAMMA1, BLOCK_GAMMA2, BLOCK_R, BLOCK_LAMBDA2, BLOCK_M, BLOCK_SIGMA2, BLOCK_BETA0 = range(7)


@nb.njit(cache=True)
def make_ctx(X, M, pi, beta0, r, l2, m, s2, sigma_beta, alpha1, alpha2):
    n, p = X.shape
    return (X, M, pi, beta0, r, l2, m, s2, sigma_beta,
            np.zeros(n), np.zeros(p), np.zeros((n, p)), 1.0, float(alpha1), float(alpha2), 0)


@nb.njit(cache=True)
def with_index(ctx, idx, log_rest, other):
    (X, M, pi, beta0, r, l2, m, s2, sb, _, colsum, logw0, _o, a1, a2, _i) = ctx
    return (X, M, pi, beta0, r, l2, m, s2, sb, log_rest, colsum, logw0, float(other), a1, a2, idx)


@nb.njit(cache=True)
def block_vg(kind, x, ctx):
    """Value and gradient of block `kind` at x; ctx is built by make_ctx."""
    (X, M, pi, beta0, r, l2, m, s2, sb, log_rest, colsum, logw0, other, a1, a2, idx) = ctx
    if kind == BLOCK_GAMMA1:
        return gamma1_vg(x, pi[:, idx], other, a1, a2)
    if kind == BLOCK_GAMMA2:
        return gamma2_vg(x, pi[:, idx], other, a1, a2)
    if kind == BLOCK_R:
        return r_vg(x, X[:, idx], M, pi[:, idx], beta0[idx], m, s2, l2[idx], sb, log_rest)
    if kind == BLOCK_LAMBDA2:
        return lambda2_vg(x, M, pi[:, idx], beta0[idx], m, s2, r[idx], sb, log_rest)
    if kind == BLOCK_M:
        return m_vg(x, X[idx], M[idx], pi[idx], beta0, r, l2, s2[idx])
    if kind == BLOCK_SIGMA2:
        return sigma2_vg(x, M[idx], pi[idx], beta0, r, l2, m[idx])
    return beta0_vg(x, colsum, M, logw0)


# ---------------------------------------------------------------------------
# quasi-Newton ascent with optional box constraints


def _make_ascent(call):
    def qn_ascent(vg, x0, lower, upper, bounded, tol, max_iter, args):
        """Maximise the objective behind `vg` starting from x0.

        BFGS on the Hessian approximation of the negated objective. When
        `bounded`, the direction is computed on the free variables (those
        not pinned at a bound by the gradient) and each trial point is
        projected back into the box, so the Armijo search follows the
        projected path. Returns (x, value, grad, iterations, status).
        """
        n = x0.shape[0]
        x = x0.copy()
        if bounded:
            for a in range(n):
                x[a] = min(max(x[a], lower[a]), upper[a])
        f, g = call(vg, x, args)
        if not math.isfinite(f) or not np.all(np.isfinite(g)):
            return x, f, g, 0, STATUS_NONFINITE
        B = np.eye(n)
        scaled = False
        free = np.ones(n, dtype=np.bool_)
        d = np.zeros(n)
        xt = np.empty(n)
        for it in range(max_iter):
            pgmax = 0.0
            for a in range(n):
                if bounded:
                    v = min(max(x[a] + g[a], lower[a]), upper[a]) - x[a]
                else:
                    v = g[a]
                pgmax = max(pgmax, abs(v))
            if pgmax < tol:
                return x, f, g, it, STATUS_CONVERGED
            nfree = 0
            for a in range(n):
                pinned = bounded and (
                    (x[a] <= lower[a] and g[a] < 0.0) or (x[a] >= upper[a] and g[a] > 0.0)
                )
                free[a] = not pinned
                if free[a]:
                    nfree += 1
            d[:] = 0.0
            if nfree == n:
                step = np.linalg.solve(B, g)
                for a in range(n):
                    d[a] = step[a]
            else:
                idx = np.empty(nfree, dtype=np.int64)
                c = 0
                for a in range(n):
                    if free[a]:
                        idx[c] = a
                        c += 1
                sub = np.empty((nfree, nfree))
                rhs = np.empty(nfree)
                for a in range(nfree):
                    rhs[a] = g[idx[a]]
                    for b in range(nfree):
                        sub[a, b] = B[idx[a], idx[b]]
                step = np.linalg.solve(sub, rhs)
                for a in range(nfree):
                    d[idx[a]] = step[a]
            slope = np.dot(d, g)
            if not (slope > 0.0) or not np.all(np.isfinite(d)):
                B = np.eye(n)
                scaled = False
                for a in range(n):
                    d[a] = g[a] if free[a] else 0.0
            t = 1.0
            if not scaled:
                t = min(1.0, 1.0 / np.max(np.abs(d)))
            accepted = False
            ft = f
            gt = g
            for _ in range(MAX_HALVINGS):
                moved = False
                gain = 0.0
                for a in range(n):
                    v = x[a] + t * d[a]
                    if bounded:
                        v = min(max(v, lower[a]), upper[a])
                    xt[a] = v
                    if v != x[a]:
                        moved = True
                    gain += g[a] * (v - x[a])
                if not moved:
                    break
                ft, gt = call(vg, xt, args)
                ok = math.isfinite(ft) and np.all(np.isfinite(gt))
                if ok and ft >= f + ARMIJO_C * gain:
                    accepted = True
                    break
                if gain < NOISE_REL * (1.0 + abs(f)):
                    # predicted gain is below the rounding level of f: accept
                    # only a step that still shrinks the projected gradient
                    if ok and ft >= f - NOISE_REL * (1.0 + abs(f)):
                        pgt = 0.0
                        for a in range(n):
                            if bounded:
                                v = min(max(xt[a] + gt[a], lower[a]), upper[a]) - xt[a]
                            else:
                                v = gt[a]
                            pgt = max(pgt, abs(v))
                        accepted = pgt < pgmax
                    break
                t *= 0.5
            if not accepted:
                return x, f, g, it, STATUS_LINE_SEARCH
            s = xt - x
            y = g - gt
            sy = np.dot(s, y)
            if sy > 1e-12 * np.sqrt(np.dot(s, s) * np.dot(y, y)):
                if not scaled:
                    B = np.eye(n) * (np.dot(y, y) / sy)
                    scaled = True
                Bs = B @ s
                sBs = np.dot(s, Bs)
                if sBs > 0.0:
                    B = B - np.outer(Bs, Bs) / sBs + np.outer(y, y) / sy
            x = xt.copy()
            f = ft
            g = gt
        pgmax = 0.0
        for a in range(n):
            if bounded:
                v = min(max(x[a] + g[a], lower[a]), upper[a]) - x[a]
            else:
                v = g[a]
            pgmax = max(pgmax, abs(v))
        if pgmax < tol:
            return x, f, g, max_iter, STATUS_CONVERGED
        return x, f, g, max_iter, STATUS_MAX_ITER

    return qn_ascent


def _call_python(vg, x, args):
    return vg(x, *args)


qn_ascent = _make_ascent(_call_python)
qn_ascent_blocks = nb.njit(cache=True)(_make_ascent(block_vg))


# ---------------------------------------------------------------------------
# one continuous sweep of the block updates


@nb.njit(cache=True)
def _solve(kind, x0, lo, hi, bounded, tol, max_iter, ctx, stats):
    x, f, g, it, st = qn_ascent_blocks(kind, x0, lo, hi, bounded, tol, max_iter, ctx)
    stats[kind, st] += 1
    if st == STATUS_NONFINITE:
        return x0
    return x


@nb.njit(cache=True)
def sweep(X, M, pi, beta0, r, l2, m, s2, g1, g2, sigma_beta, alpha1, alpha2,
          tol, max_iter, jacobi, stats):
    """Update gamma1, gamma2, r, lambda2, m, sigma2 in place (Gauss-Seidel).

    With `jacobi`, every j-block (and i-block) sees the other blocks of its
    kind at their sweep-start values instead of the latest ones.
    """
    n, p = X.shape
    k = r.shape[1]
    glo = np.full(1, GAMMA_LO)
    ghi = np.full(1, GAMMA_HI)
    vlo = np.full(k, VAR_LO)
    vhi = np.full(k, VAR_HI)
    unb = np.zeros(k)
    empty_rest = np.zeros(n)

    ctx = make_ctx(X, M, pi, beta0, r, l2, m, s2, sigma_beta, alpha1, alpha2)
    for j in range(p):
        c = with_index(ctx, j, empty_rest, g2[j])
        g1[j] = _solve(BLOCK_GAMMA1, np.full(1, g1[j]), glo, ghi, True, tol, max_iter, c, stats)[0]
        c = with_index(ctx, j, empty_rest, g1[j])
        g2[j] = _solve(BLOCK_GAMMA2, np.full(1, g2[j]), glo, ghi, True, tol, max_iter, c, stats)[0]

    A = log_weights(pi, beta0, mgf_matrix(m, s2, r, l2))
    A_start = A.copy()
    r_cur = r.copy() if jacobi else r
    l2_cur = l2.copy() if jacobi else l2
    ctx = make_ctx(X, M, pi, beta0, r_cur, l2_cur, m, s2, sigma_beta, alpha1, alpha2)
    for j in range(p):
        log_rest = rest_logsumexp(A_start if jacobi else A, j)
        c = with_index(ctx, j, log_rest, 0.0)
        r_cur[j] = _solve(BLOCK_R, r_cur[j].copy(), unb, unb, False, tol, max_iter, c, stats)
        l2_cur[j] = _solve(BLOCK_LAMBDA2, l2_cur[j].copy(), vlo, vhi, True, tol, max_iter, c, stats)
        if not jacobi:
            for i in range(n):
                if pi[i, j] >= 1.0:
                    A[i, j] = NEG_INF
                else:
                    A[i, j] = math.log1p(-pi[i, j]) + beta0[j] + log_mgf(m[i], s2[i], r[j], l2[j])
    if jacobi:
        r[:] = r_cur
        l2[:] = l2_cur

    m_cur = m.copy() if jacobi else m
    s2_cur = s2.copy() if jacobi else s2
    ctx = make_ctx(X, M, pi, beta0, r, l2, m_cur, s2, sigma_beta, alpha1, alpha2)
    for i in range(n):
        c = with_index(ctx, i, empty_rest, 0.0)
        m_cur[i] = _solve(BLOCK_M, m_cur[i].copy(), unb, unb, False, tol, max_iter, c, stats)
        s2_cur[i] = _solve(BLOCK_SIGMA2, s2[i].copy(), vlo, vhi, True, tol, max_iter, c, stats)
        if not jacobi:
            s2[i] = s2_cur[i]
    if jacobi:
        m[:] = m_cur
        s2[:] = s2_cur


@nb.njit(cache=True)
def update_beta0(X, M, pi, beta0, r, l2, m, s2, tol, max_iter, stats):
    """Joint intercept update followed by centring; modifies beta0 in place."""
    n, p = X.shape
    logw0 = log_weights(pi, np.zeros(p), mgf_matrix(m, s2, r, l2))
    colsum = np.zeros(p)
    for i in range(n):
        for j in range(p):
            colsum[j] += X[i, j]
    ctx = make_ctx(X, M, pi, beta0, r, l2, m, s2, np.ones(r.shape[1]), 1.0, 1.0)
    (X, M, pi, beta0_, r, l2, m, s2, sb, log_rest, _c, _l, other, a1, a2, idx) = ctx
    ctx = (X, M, pi, beta0_, r, l2, m, s2, sb, log_rest, colsum, logw0, other, a1, a2, idx)
    unb = np.zeros(p)
    x = _solve(BLOCK_BETA0, beta0.copy(), unb, unb, False, tol, max_iter, ctx, stats)
    beta0[:] = x - np.mean(x)

# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels: active-set QP on the shifted simplex and subset scans.

Twin of ``heca.kernels._reference`` with the same algorithms, constants and
tie-breaks; see that module for the method description.  All cores run
without the GIL so thread pools parallelize subset enumeration.
"""

from libc.math cimport fabs, INFINITY
from libc.stdlib cimport free, malloc
from libc.string cimport memcpy

import numpy as np

BACKEND = "compiled"

PIVOT_THRESHOLD = 1e-12
DEFAULT_TOL = 1e-9

cdef double _PIVOT = 1e-12
cdef double _RELEASE_REL = 1e-11
cdef double _FEAS_EPS = 1e-13
cdef double _TIK_START = 1e-9


cdef int _solve_bordered(double* hff, double* rhs_top, double rhs_bot, int k,
                         double tik, double* aug, double* sol) nogil:
    """Gaussian elimination on [2H, -1; 1', 0]; 0 on success, 1 if singular."""
    cdef int n = k + 1
    cdef int w = n + 1
    cdef int i, j, col, p
    cdef double scale, best, v, piv, f

    for i in range(k):
        for j in range(k):
            aug[i * w + j] = 2.0 * hff[i * k + j]
        aug[i * w + i] += 2.0 * tik
        aug[i * w + k] = -1.0
        aug[i * w + n] = rhs_top[i]
    for j in range(k):
        aug[k * w + j] = 1.0
    aug[k * w + k] = 0.0
    aug[k * w + n] = rhs_bot

    scale = 1.0
    for i in range(n):
        for j in range(n):
            v = fabs(aug[i * w + j])
            if v > scale:
                scale = v

    for col in range(n):
        p = col
        best = fabs(aug[col * w + col])
        for i in range(col + 1, n):
            v = fabs(aug[i * w + col])
            if v > best:
                best = v
                p = i
        if best <= _PIVOT * scale:
            return 1
        if p != col:
            for j in range(col, w):
                v = aug[col * w + j]
                aug[col * w + j] = aug[p * w + j]
                aug[p * w + j] = v
        piv = aug[col * w + col]
        for i in range(col + 1, n):
            f = aug[i * w + col] / piv
            for j in range(col, w):
                aug[i * w + j] -= f * aug[col * w + j]

    for i in range(n - 1, -1, -1):
        v = aug[i * w + n]
        for j in range(i + 1, n):
            v -= aug[i * w + j] * sol[j]
        sol[i] = v / aug[i * w + i]
    return 0


cdef void _solve_face(double* h, double* a, const double* lo,
                      unsigned char* clamped,
                      int k, double total, int* fidx, double* hff,
                      double* rhs_top, double* aug, double* sol,
                      double* xf, double* nu) nogil:
    """Face subproblem on the free set; fills xf (nf entries) and nu."""
    cdef int nf = 0, i, j, gi, gj
    cdef double rhs_bot = total
    cdef double acc, delta

    for i in range(k):
        if not clamped[i]:
            fidx[nf] = i
            nf += 1
        else:
            rhs_bot -= lo[i]
    for i in range(nf):
        gi = fidx[i]
        for j in range(nf):
            hff[i * nf + j] = h[gi * k + fidx[j]]
        acc = a[gi]
        for j in range(k):
            if clamped[j]:
                acc -= h[gi * k + j] * lo[j]
        rhs_top[i] = 2.0 * acc

    if _solve_bordered(hff, rhs_top, rhs_bot, nf, 0.0, aug, sol):
        delta = _TIK_START
        while _solve_bordered(hff, rhs_top, rhs_bot, nf, delta, aug, sol):
            delta *= 1e4
    for i in range(nf):
        xf[i] = sol[i]
    nu[0] = sol[nf]


cdef double _kkt_residual(const double* h, const double* a, const double* lo,
                          int k, double total, const double* x,
                          const unsigned char* clamped, double nu) nogil:
    cdef double res = 0.0, ssum = 0.0, g, mu, v
    cdef int i, j
    for i in range(k):
        ssum += x[i]
        v = lo[i] - x[i]
        if v > res:
            res = v
    v = fabs(ssum - total)
    if v > res:
        res = v
    for i in range(k):
        g = 0.0
        for j in range(k):
            g += h[i * k + j] * x[j]
        g = 2.0 * (g - a[i])
        if clamped[i]:
            mu = g - nu
            if -mu > res:
                res = -mu
            v = fabs((x[i] - lo[i]) * mu)
            if v > res:
                res = v
        else:
            v = fabs(g - nu)
            if v > res:
                res = v
    return res


cdef int _qp_solve(const double* h_in, const double* a_in, const double* lo,
                   int k, double total, const double* x0, int has_x0,
                   int max_iter, double* x, double* nu_out, double* kkt_out,
                   double* scr, int* iscr, unsigned char* bscr) nogil:
    """Active-set loop; mirrors the reference implementation step for step."""
    cdef double* hs = scr
    cdef double* as_ = hs + k * k
    cdef double* xf = as_ + k
    cdef double* g = xf + k
    cdef double* hff = g + k
    cdef double* rhs_top = hff + k * k
    cdef double* sol = rhs_top + k
    cdef double* aug = sol + (k + 1)
    cdef int* fidx = iscr
    cdef unsigned char* clamped = bscr
    cdef unsigned char* no_release = bscr + k

    cdef double s_h = 0.0, slack, nu = 0.0, v, gmax, mumin, alpha, aj, cur
    cdef int i, j, it, nf, rel, blocker, pos, last_released = -1
    cdef int any_clamped, cand_found, ok

    for i in range(k * k):
        v = fabs(h_in[i])
        if v > s_h:
            s_h = v
    if not s_h > 0.0:
        s_h = 1.0
    for i in range(k * k):
        hs[i] = h_in[i] / s_h
    for i in range(k):
        as_[i] = a_in[i] / s_h

    slack = total
    for i in range(k):
        slack -= lo[i]

    if k == 1:
        x[0] = total
        nu = 2.0 * (h_in[0] * total - a_in[0])
        clamped[0] = 0
        nu_out[0] = nu
        kkt_out[0] = _kkt_residual(h_in, a_in, lo, k, total, x, clamped, nu)
        return 0

    ok = 0
    if has_x0:
        v = 0.0
        ok = 1
        for i in range(k):
            if x0[i] < lo[i]:
                ok = 0
            v += x0[i]
        if fabs(v - total) > 1e-12 * (1.0 if fabs(total) < 1.0 else fabs(total)):
            ok = 0
        if ok:
            for i in range(k):
                x[i] = x0[i]
    if not ok:
        for i in range(k):
            x[i] = lo[i] + slack / k

    for i in range(k):
        clamped[i] = 1 if x[i] <= lo[i] else 0
        no_release[i] = 0

    it = 0
    while it < max_iter:
        it += 1
        nf = 0
        for i in range(k):
            if not clamped[i]:
                nf += 1
        if nf == 0:
            nu = INFINITY
            for i in range(k):
                g[i] = 0.0
                for j in range(k):
                    g[i] += hs[i * k + j] * x[j]
                g[i] = 2.0 * (g[i] - as_[i])
                if g[i] < nu:
                    nu = g[i]
            break
        _solve_face(hs, as_, lo, clamped, k, total, fidx, hff,
                    rhs_top, aug, sol, xf, &nu)

        ok = 1
        for i in range(nf):
            if xf[i] < lo[fidx[i]] - _FEAS_EPS:
                ok = 0
                break
        if ok:
            for i in range(nf):
                j = fidx[i]
                x[j] = xf[i] if xf[i] > lo[j] else lo[j]
            any_clamped = 0
            for i in range(k):
                if clamped[i]:
                    any_clamped = 1
                    break
            if not any_clamped:
                break
            gmax = 0.0
            for i in range(k):
                g[i] = 0.0
                for j in range(k):
                    g[i] += hs[i * k + j] * x[j]
                g[i] = 2.0 * (g[i] - as_[i])
                if fabs(g[i]) > gmax:
                    gmax = fabs(g[i])
            cand_found = 0
            rel = -1
            mumin = 0.0
            for i in range(k):
                if clamped[i] and not no_release[i]:
                    v = g[i] - nu
                    if (not cand_found) or v < mumin:
                        mumin = v
                        rel = i
                        cand_found = 1
            if not cand_found:
                break
            if mumin >= -_RELEASE_REL * (1.0 + gmax):
                break
            clamped[rel] = 0
            last_released = rel
        else:
            alpha = 1.0
            blocker = -1
            pos = -1
            for i in range(nf):
                j = fidx[i]
                if xf[i] < lo[j]:
                    cur = x[j]
                    aj = (cur - lo[j]) / (cur - xf[i])
                else:
                    aj = 1.0
                if aj < alpha:
                    alpha = aj
                    blocker = j
                    pos = i
            if blocker < 0:
                blocker = fidx[0]
                pos = 0
            for i in range(nf):
                j = fidx[i]
                x[j] = x[j] + alpha * (xf[i] - x[j])
            x[blocker] = lo[blocker]
            clamped[blocker] = 1
            if blocker == last_released and alpha < 1e-14:
                no_release[blocker] = 1
            last_released = -1

    nu_out[0] = nu * s_h
    kkt_out[0] = _kkt_residual(h_in, a_in, lo, k, total, x, clamped, nu * s_h)
    return it


def qp_shrink_simplex(H, a, lo, total, x0=None, tol=DEFAULT_TOL, max_iter=0):
    """Active-set solve; same contract as the reference kernel."""
    cdef double[:, ::1] hv = np.ascontiguousarray(H, dtype=np.float64)
    cdef double[::1] av = np.ascontiguousarray(a, dtype=np.float64)
    cdef int k = av.shape[0]
    lo_arr = np.broadcast_to(np.asarray(lo, dtype=np.float64), (k,)).copy()
    cdef double[::1] lov = lo_arr
    cdef double[::1] x0v
    cdef int has_x0 = 0
    if x0 is not None:
        x0v = np.ascontiguousarray(x0, dtype=np.float64)
        has_x0 = 1
    else:
        x0v = np.zeros(1)
    if max_iter <= 0:
        max_iter = 6 * k + 60

    x_arr = np.empty(k)
    cdef double[::1] xv = x_arr
    cdef double nu = 0.0, kkt = 0.0, tot = total
    cdef int mi = max_iter, it

    # layout: hs k^2 | a k | xf k | g k | hff k^2 | rhs k | sol k+1 | aug (k+1)(k+2)
    cdef double* scr = <double*> malloc((2 * k * k + 5 * k + 2 +
                                         (k + 1) * (k + 2)) * sizeof(double))
    cdef int* iscr = <int*> malloc(k * sizeof(int))
    cdef unsigned char* bscr = <unsigned char*> malloc(2 * k)
    if scr == NULL or iscr == NULL or bscr == NULL:
        free(scr); free(iscr); free(bscr)
        raise MemoryError
    try:
        with nogil:
            it = _qp_solve(&hv[0, 0], &av[0], &lov[0], k, tot,
                           &x0v[0] if has_x0 else NULL, has_x0, mi,
                           &xv[0], &nu, &kkt, scr, iscr, bscr)
    finally:
        free(scr); free(iscr); free(bscr)
    return x_arr, nu, kkt, it


# ---------------------------------------------------------------------------
# Colex subset enumeration
# ---------------------------------------------------------------------------

cdef void _build_comb(unsigned long long* tab, int m, int c) nogil:
    """Pascal table tab[v * (c + 1) + i] = C(v, i) for v <= m, i <= c."""
    cdef int v, i
    for v in range(m + 1):
        for i in range(c + 1):
            if i == 0:
                tab[v * (c + 1) + i] = 1
            elif i > v:
                tab[v * (c + 1) + i] = 0
            else:
                tab[v * (c + 1) + i] = (tab[(v - 1) * (c + 1) + i - 1] +
                                        tab[(v - 1) * (c + 1) + i])


cdef void _colex_unrank(unsigned long long rank, int c, int m,
                        unsigned long long* tab, long long* out) nogil:
    cdef int i, v
    cdef unsigned long long rem = rank
    for i in range(c, 0, -1):
        v = i - 1
        while v + 1 <= m and tab[(v + 1) * (c + 1) + i] <= rem:
            v += 1
        out[i - 1] = v
        rem -= tab[v * (c + 1) + i]


cdef int _colex_next(long long* s, int c, int m) nogil:
    cdef int i, j
    cdef long long nxt, limit
    for i in range(c):
        nxt = s[i] + 1
        limit = s[i + 1] if i + 1 < c else m
        if nxt < limit:
            s[i] = nxt
            for j in range(i):
                s[j] = j
            return 1
    return 0


cdef int _lex_smaller(const long long* a, const long long* b, int c) nogil:
    cdef int i
    for i in range(c):
        if a[i] != b[i]:
            return 1 if a[i] < b[i] else 0
    return 0


def best_subset_block(F, Y, FtF, FtY, lam, tau, lo, c, rank_lo, rank_hi,
                      tol=DEFAULT_TOL):
    """Scan colex ranks [rank_lo, rank_hi); same contract as the reference."""
    cdef double[:, ::1] fv = np.ascontiguousarray(F, dtype=np.float64)
    cdef double[::1] yv = np.ascontiguousarray(Y, dtype=np.float64)
    cdef double[:, ::1] gv = np.ascontiguousarray(FtF, dtype=np.float64)
    cdef double[::1] gyv = np.ascontiguousarray(FtY, dtype=np.float64)
    cdef int m = fv.shape[1]
    cdef int rr = fv.shape[0]
    cdef int cc = c
    cdef double lam_ = lam, tau_ = tau, lo_ = lo
    cdef unsigned long long r_lo = rank_lo, r_hi = rank_hi

    best_subset = np.empty(c, dtype=np.int64)
    best_x = np.empty(c)
    cdef long long[::1] bsv = best_subset
    cdef double[::1] bxv = best_x
    cdef double best_obj = INFINITY, max_kkt = 0.0
    cdef unsigned long long n_done = 0

    cdef int scr_len = 2 * cc * cc + 5 * cc + 2 + (cc + 1) * (cc + 2)
    cdef double* scr = <double*> malloc((scr_len + cc * cc + 3 * cc) *
                                        sizeof(double))
    cdef int* iscr = <int*> malloc(cc * sizeof(int))
    cdef unsigned char* bscr = <unsigned char*> malloc(2 * cc)
    cdef long long* s = <long long*> malloc(2 * cc * sizeof(long long))
    cdef unsigned long long* tab = <unsigned long long*> malloc(
        (m + 1) * (cc + 1) * sizeof(unsigned long long))
    if scr == NULL or iscr == NULL or bscr == NULL or s == NULL or tab == NULL:
        free(scr); free(iscr); free(bscr); free(s); free(tab)
        raise MemoryError

    cdef double* h = scr + scr_len
    cdef double* a = h + cc * cc
    cdef double* x = a + cc
    cdef double* lov = x + cc
    cdef long long* sbest = s + cc

    cdef unsigned long long rank
    cdef int i, j, it
    cdef double nu, kkt, obj, acc
    cdef int replace

    try:
        with nogil:
            _build_comb(tab, m, cc)
            _colex_unrank(r_lo, cc, m, tab, s)
            for i in range(cc):
                lov[i] = lo_
                sbest[i] = s[i]
                bxv[i] = 0.0
            rank = r_lo
            while rank < r_hi:
                for i in range(cc):
                    for j in range(cc):
                        h[i * cc + j] = gv[s[i], s[j]]
                    h[i * cc + i] += lam_
                    a[i] = gyv[s[i]] + lam_ * tau_
                it = _qp_solve(h, a, lov, cc, 1.0, NULL, 0, 6 * cc + 60,
                               x, &nu, &kkt, scr, iscr, bscr)
                obj = 0.0
                for i in range(rr):
                    acc = yv[i]
                    for j in range(cc):
                        acc -= fv[i, s[j]] * x[j]
                    obj += acc * acc
                for j in range(cc):
                    obj += lam_ * (x[j] - tau_) * (x[j] - tau_)
                replace = 0
                if obj < best_obj:
                    replace = 1
                elif obj == best_obj and _lex_smaller(s, sbest, cc):
                    replace = 1
                if replace:
                    best_obj = obj
                    for i in range(cc):
                        sbest[i] = s[i]
                        bxv[i] = x[i]
                if kkt > max_kkt:
                    max_kkt = kkt
                n_done += 1
                rank += 1
                if rank < r_hi:
                    if not _colex_next(s, cc, m):
                        break
            for i in range(cc):
                bsv[i] = sbest[i]
    finally:
        free(scr); free(iscr); free(bscr); free(s); free(tab)
    return best_obj, best_subset, best_x, max_kkt, int(n_done)

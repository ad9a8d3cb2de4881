"""Pure-Python/NumPy kernels: active-set QP on the simplex and subset scans.

This module is the reference twin of the compiled extension
(``heca.kernels._compiled``).  Both implement the same algorithms with the
same constants and tie-breaks, and every reduction (dot products, sums,
maxima) is evaluated in the same sequential order, so the two backends
produce bit-identical results; the compiled version only removes
interpreter overhead from the inner loops.

Problem solved by the QP kernel:

    minimize    x' H x - 2 a' x
    subject to  sum(x) = total,   x_j >= lo_j

with H symmetric positive semidefinite.  Upper bounds x_j <= 1 are implied
by the constraint set whenever lo >= 0 and total <= 1, so they are not
handled explicitly.  The method is a primal active-set iteration started at
the analytic center of the feasible slice; each working-set change either
clamps one variable at its lower bound or releases the one with the most
negative multiplier.  Equality-constrained subproblems go through the
bordered KKT system, solved by Gaussian elimination with partial pivoting on
a unit-scaled copy of H (so the pivot threshold is meaningful for any data
magnitude); a pivot below PIVOT_THRESHOLD triggers a retry with a Tikhonov
term on the Hessian block, which also fixes the near-minimum-norm tie-break
for rank-deficient lambda = 0 instances.
"""

import math

import numpy as np

BACKEND = "python"

PIVOT_THRESHOLD = 1e-12
DEFAULT_TOL = 1e-9

# Dual tolerance for releasing a clamped variable, relative to gradient size.
_RELEASE_REL = 1e-11
# Primal slack treated as "on the bound" when accepting a face solution.
_FEAS_EPS = 1e-13
# First Tikhonov retry strength (keeps damped pivots above rounding noise).
_TIK_START = 1e-9


def _solve_bordered(hff, rhs_top, rhs_bot, k, tik, aug, sol):
    """Gaussian elimination on [2H, -1; 1', 0]; True on success.

    ``hff`` is a flat row-major k*k list/array; ``aug`` and ``sol`` are
    scratch lists sized (k+1)*(k+2) and k+1.  Sequential arithmetic mirrors
    the compiled version exactly.
    """
    n = k + 1
    w = n + 1
    for i in range(k):
        base = i * w
        row = i * k
        for j in range(k):
            aug[base + j] = 2.0 * hff[row + j]
        aug[base + i] += 2.0 * tik
        aug[base + k] = -1.0
        aug[base + n] = rhs_top[i]
    base = k * w
    for j in range(k):
        aug[base + j] = 1.0
    aug[base + k] = 0.0
    aug[base + n] = rhs_bot

    scale = 1.0
    for i in range(n):
        for j in range(n):
            v = abs(aug[i * w + j])
            if v > scale:
                scale = v

    for col in range(n):
        p = col
        best = abs(aug[col * w + col])
        for i in range(col + 1, n):
            v = abs(aug[i * w + col])
            if v > best:
                best = v
                p = i
        if best <= PIVOT_THRESHOLD * scale:
            return False
        if p != col:
            for j in range(col, w):
                aug[col * w + j], aug[p * w + j] = aug[p * w + j], aug[col * w + j]
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
    return True


def _solve_face(h, a, lo, clamped, k, total):
    """Face subproblem on the free set; returns (free_idx, xf, nu)."""
    fidx = [i for i in range(k) if not clamped[i]]
    nf = len(fidx)
    rhs_bot = total
    for i in range(k):
        if clamped[i]:
            rhs_bot -= lo[i]
    hff = [0.0] * (nf * nf)
    rhs_top = [0.0] * nf
    for i in range(nf):
        gi = fidx[i]
        for j in range(nf):
            hff[i * nf + j] = h[gi * k + fidx[j]]
        acc = a[gi]
        for j in range(k):
            if clamped[j]:
                acc -= h[gi * k + j] * lo[j]
        rhs_top[i] = 2.0 * acc

    aug = [0.0] * ((nf + 1) * (nf + 2))
    sol = [0.0] * (nf + 1)
    if not _solve_bordered(hff, rhs_top, rhs_bot, nf, 0.0, aug, sol):
        delta = _TIK_START
        while not _solve_bordered(hff, rhs_top, rhs_bot, nf, delta, aug, sol):
            delta *= 1e4
    return fidx, sol[:nf], sol[nf]


def _kkt_residual(h, a, lo, k, total, x, clamped, nu):
    res = 0.0
    ssum = 0.0
    for i in range(k):
        ssum += x[i]
        v = lo[i] - x[i]
        if v > res:
            res = v
    v = abs(ssum - total)
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
            v = abs((x[i] - lo[i]) * mu)
            if v > res:
                res = v
        else:
            v = abs(g - nu)
            if v > res:
                res = v
    return res


def kkt_residual(H, a, lo, total, x, clamped, nu):
    """Max violation over stationarity, dual sign, complementarity, primal."""
    k = len(a)
    return _kkt_residual([float(v) for v in np.asarray(H).reshape(-1)],
                         [float(v) for v in a], [float(v) for v in lo],
                         k, float(total), [float(v) for v in x],
                         list(np.asarray(clamped, dtype=bool)), float(nu))


def qp_shrink_simplex(H, a, lo, total, x0=None, tol=DEFAULT_TOL, max_iter=0):
    """Active-set solve of the shifted-simplex QP.

    Returns (x, nu, kkt, n_iter).  ``kkt`` is the residual recomputed at the
    returned point and multiplier on the original (unscaled) data, so a
    failed solve is always visible to the caller.
    """
    h_in = [float(v) for v in np.asarray(H, dtype=np.float64).reshape(-1)]
    a_in = [float(v) for v in np.asarray(a, dtype=np.float64).reshape(-1)]
    k = len(a_in)
    lo_arr = np.broadcast_to(np.asarray(lo, dtype=np.float64), (k,))
    lov = [float(v) for v in lo_arr]
    if max_iter <= 0:
        max_iter = 6 * k + 60

    s_h = 0.0
    for v in h_in:
        if abs(v) > s_h:
            s_h = abs(v)
    if not s_h > 0.0:
        s_h = 1.0
    hs = [v / s_h for v in h_in]
    as_ = [v / s_h for v in a_in]

    slack = total
    for v in lov:
        slack -= v

    if k == 1:
        x = [float(total)]
        nu = 2.0 * (h_in[0] * total - a_in[0])
        kkt = _kkt_residual(h_in, a_in, lov, 1, total, x, [False], nu)
        return np.array(x), nu, kkt, 0

    x = None
    if x0 is not None:
        cand = [float(v) for v in x0]
        ssum = 0.0
        ok = True
        for i in range(k):
            if cand[i] < lov[i]:
                ok = False
            ssum += cand[i]
        if abs(ssum - total) > 1e-12 * (abs(total) if abs(total) > 1.0 else 1.0):
            ok = False
        if ok:
            x = cand
    if x is None:
        x = [lov[i] + slack / k for i in range(k)]

    clamped = [x[i] <= lov[i] for i in range(k)]
    no_release = [False] * k
    nu = 0.0
    last_released = -1

    it = 0
    while it < max_iter:
        it += 1
        nf = sum(1 for c in clamped if not c)
        if nf == 0:
            nu = math.inf
            for i in range(k):
                g = 0.0
                for j in range(k):
                    g += hs[i * k + j] * x[j]
                g = 2.0 * (g - as_[i])
                if g < nu:
                    nu = g
            break
        fidx, xf, nu = _solve_face(hs, as_, lov, clamped, k, total)

        ok = True
        for i in range(nf):
            if xf[i] < lov[fidx[i]] - _FEAS_EPS:
                ok = False
                break
        if ok:
            for i in range(nf):
                j = fidx[i]
                x[j] = xf[i] if xf[i] > lov[j] else lov[j]
            if not any(clamped):
                break
            gmax = 0.0
            g = [0.0] * k
            for i in range(k):
                acc = 0.0
                for j in range(k):
                    acc += hs[i * k + j] * x[j]
                g[i] = 2.0 * (acc - as_[i])
                if abs(g[i]) > gmax:
                    gmax = abs(g[i])
            rel = -1
            mumin = 0.0
            found = False
            for i in range(k):
                if clamped[i] and not no_release[i]:
                    v = g[i] - nu
                    if (not found) or v < mumin:
                        mumin = v
                        rel = i
                        found = True
            if not found:
                break
            if mumin >= -_RELEASE_REL * (1.0 + gmax):
                break
            clamped[rel] = False
            last_released = rel
        else:
            alpha = 1.0
            blocker = -1
            for i in range(nf):
                j = fidx[i]
                if xf[i] < lov[j]:
                    cur = x[j]
                    aj = (cur - lov[j]) / (cur - xf[i])
                else:
                    aj = 1.0
                if aj < alpha:
                    alpha = aj
                    blocker = j
            if blocker < 0:
                blocker = fidx[0]
            for i in range(nf):
                j = fidx[i]
                x[j] = x[j] + alpha * (xf[i] - x[j])
            x[blocker] = lov[blocker]
            clamped[blocker] = True
            if blocker == last_released and alpha < 1e-14:
                # Degenerate release/clamp pair at noise level: freeze it.
                no_release[blocker] = True
            last_released = -1

    nu_out = nu * s_h
    kkt = _kkt_residual(h_in, a_in, lov, k, total, x, clamped, nu_out)
    return np.array(x), nu_out, kkt, it


# ---------------------------------------------------------------------------
# Colex subset enumeration
# ---------------------------------------------------------------------------

def colex_rank(subset):
    """Rank of a sorted index tuple in colexicographic order."""
    return sum(math.comb(v, i + 1) for i, v in enumerate(subset))


def colex_unrank(rank, c, m):
    """Inverse of colex_rank; returns a sorted numpy index array."""
    out = np.empty(c, dtype=np.int64)
    rem = int(rank)
    for i in range(c, 0, -1):
        v = i - 1
        while math.comb(v + 1, i) <= rem:
            v += 1
        out[i - 1] = v
        rem -= math.comb(v, i)
    return out


def _colex_next(subset, m):
    """Advance a sorted index list to its colex successor; False at the end."""
    c = len(subset)
    for i in range(c):
        nxt = subset[i] + 1
        limit = subset[i + 1] if i + 1 < c else m
        if nxt < limit:
            subset[i] = nxt
            for j in range(i):
                subset[j] = j
            return True
    return False


def best_subset_block(F, Y, FtF, FtY, lam, tau, lo, c, rank_lo, rank_hi,
                      tol=DEFAULT_TOL):
    """Scan colex ranks [rank_lo, rank_hi) of c-subsets for the best fit.

    For each subset S the reduced QP uses H = FtF[S, S] + lam*I and
    a = FtY[S] + lam*tau; the objective is re-evaluated in residual form,
    sum((Y - F[:, S] x)^2) + lam * sum((x - tau)^2), which is immune to the
    cancellation the Gram form suffers near zero objectives.  Ties in the
    objective go to the lexicographically smaller sorted index tuple.

    Returns (objective, subset ndarray, weights ndarray, max_kkt, n_solved).
    """
    fm = np.asarray(F, dtype=np.float64)
    yv = [float(v) for v in np.asarray(Y, dtype=np.float64)]
    gm = np.asarray(FtF, dtype=np.float64)
    gy = [float(v) for v in np.asarray(FtY, dtype=np.float64)]
    rr, m = fm.shape
    frows = [[float(v) for v in row] for row in fm]
    grows = [[float(v) for v in row] for row in gm]

    S = [int(v) for v in colex_unrank(rank_lo, c, m)]
    lo_vec = np.full(c, float(lo))
    lam = float(lam)
    tau = float(tau)
    best_obj = math.inf
    best_key = list(S)
    best_x = [0.0] * c
    max_kkt = 0.0
    n = 0
    h = np.empty((c, c))
    a = np.empty(c)
    for _ in range(int(rank_lo), int(rank_hi)):
        for i in range(c):
            gi = grows[S[i]]
            for j in range(c):
                h[i, j] = gi[S[j]]
            h[i, i] += lam
            a[i] = gy[S[i]] + lam * tau
        x, _nu, kkt, _ = qp_shrink_simplex(h, a, lo_vec, 1.0, tol=tol)
        obj = 0.0
        for i in range(rr):
            acc = yv[i]
            row = frows[i]
            for j in range(c):
                acc -= row[S[j]] * x[j]
            obj += acc * acc
        for j in range(c):
            obj += lam * (x[j] - tau) * (x[j] - tau)
        if obj < best_obj or (obj == best_obj and S < best_key):
            best_obj = obj
            best_key = list(S)
            best_x = [float(v) for v in x]
        if kkt > max_kkt:
            max_kkt = kkt
        n += 1
        if not _colex_next(S, m):
            break
    return (best_obj, np.array(best_key, dtype=np.int64), np.array(best_x),
            max_kkt, n)

"""Hot inner loops: the one-constraint QCQP root finder and closed-loop rollouts.

Every function here is written in the numpy subset numba understands and is
compiled by :func:`dgsmpc._accel.kernel` unless ``DGSMPC_DISABLE_NUMBA`` is set,
in which case the same source runs as ordinary numpy code.

The QCQP is handled in coordinates that diagonalise both Hessians at once:
``c = T y`` with ``T' W2_cc T = I`` and ``T' W1_cc T = diag(d)``. The stationary
point of the Lagrangian for multiplier ``lam`` is then
``y_i = -(a_i + lam b_i) / (1 + lam d_i)`` with ``a = T' W2_cx x`` and
``b = T' W1_cx x``.
"""

import numpy as np

from ._accel import NUMBA_ENABLED, kernel

# status codes shared by the kernels and their Python wrappers
UNCONSTRAINED = 0
ACTIVE = 1
AT_MINIMUM = 2
INFEASIBLE = -1
NO_CONVERGENCE = -2
NON_MONOTONE = -3

MODE_FIXED = 0
MODE_METHOD1 = 1
MODE_METHOD2 = 2


if NUMBA_ENABLED:

    @kernel
    def matvec(M, v):
        out = np.zeros(M.shape[0])
        for i in range(M.shape[0]):
            acc = 0.0
            for j in range(M.shape[1]):
                acc += M[i, j] * v[j]
            out[i] = acc
        return out

    @kernel
    def quad_form(M, v):
        s = 0.0
        for i in range(v.shape[0]):
            row = 0.0
            for j in range(v.shape[0]):
                row += M[i, j] * v[j]
            s += v[i] * row
        return s

    @kernel
    def secular_eval(lam, d, a, b, const):
        """Constraint excess ``g(lam)`` and its derivative at the Lagrangian stationary point."""
        g = const
        dg = 0.0
        for i in range(d.shape[0]):
            den = 1.0 + lam * d[i]
            yi = -(a[i] + lam * b[i]) / den
            dyi = -(b[i] - a[i] * d[i]) / (den * den)
            g += d[i] * yi * yi + 2.0 * b[i] * yi
            dg += 2.0 * (d[i] * yi + b[i]) * dyi
        return g, dg

else:

    def matvec(M, v):
        return M @ v

    def quad_form(M, v):
        return float(v @ M @ v)

    def secular_eval(lam, d, a, b, const):
        den = 1.0 + lam * d
        y = -(a + lam * b) / den
        dy = -(b - a * d) / (den * den)
        g = const + float(np.sum(d * y * y + 2.0 * b * y))
        dg = float(np.sum(2.0 * (d * y + b) * dy))
        return g, dg


@kernel
def secular_solve(d, a, b, const, dcut, gtol, ftol, max_iter):
    """Find the multiplier of the single quadratic constraint.

    ``const`` is the part of ``g`` that does not depend on ``c``
    (``x' W1_xx x + trace_bar - eps``). Returns ``(status, lam, y, g, iters)``.
    """
    y = -a.copy()
    g0, _ = secular_eval(0.0, d, a, b, const)
    if g0 <= gtol:
        return UNCONSTRAINED, 0.0, y, g0, 0

    keep = d > dcut
    gmin = const - np.sum(b[keep] * b[keep] / d[keep])
    if gmin > ftol:
        return INFEASIBLE, np.inf, y, gmin, 0
    if gmin >= -gtol:
        return AT_MINIMUM, np.inf, y, gmin, 0

    lo, g_lo = 0.0, g0
    hi = 1.0
    g_hi, _ = secular_eval(hi, d, a, b, const)
    it = 0
    while g_hi > 0.0:
        if g_hi > g_lo + gtol:
            return NON_MONOTONE, hi, y, g_hi, it
        lo, g_lo = hi, g_hi
        hi *= 16.0
        g_hi, _ = secular_eval(hi, d, a, b, const)
        it += 1
        if it >= max_iter or hi > 1e300:
            return NO_CONVERGENCE, hi, y, g_hi, it

    lam = lo
    g, dg = secular_eval(lam, d, a, b, const)
    status = NO_CONVERGENCE
    while it < max_iter:
        it += 1
        if dg < 0.0:
            step = lam - g / dg
        else:
            step = -1.0
        if not (lo < step < hi):
            step = 0.5 * (lo + hi)
        lam = step
        g, dg = secular_eval(lam, d, a, b, const)
        if g > 0.0:
            if g > g_lo + gtol:
                return NON_MONOTONE, lam, y, g, it
            lo, g_lo = lam, g
        else:
            if g < g_hi - gtol:
                return NON_MONOTONE, lam, y, g, it
            hi, g_hi = lam, g
        if abs(g) <= gtol:
            status = ACTIVE
            break
        if hi - lo <= 1e-15 * hi:
            # bracket collapsed: settle on the feasible end
            lam, g = hi, g_hi
            status = ACTIVE
            break
    if status != ACTIVE:
        return NO_CONVERGENCE, lam, y, g, it
    y = -(a + lam * b) / (1.0 + lam * d)
    return ACTIVE, lam, y, g, it


@kernel
def solve_from_bank(j, x, eps, T, d, TA, TB, W1, W2, G, trace_bar, dcut, rtol, max_iter):
    """QCQP at grid index ``j`` of an operator bank. Returns ``(status, lam, c, objective)``."""
    nx = x.shape[0]
    nc = d.shape[1]
    nz = nx + nc
    gtol = rtol * (1.0 + abs(eps))
    const = quad_form(W1[j][:nx, :nx], x) + trace_bar[j] - eps
    a = matvec(TA[j], x)
    b = matvec(TB[j], x)
    status, lam, y, g, iters = secular_solve(d[j], a, b, const, dcut[j], gtol, gtol, max_iter)
    if status == AT_MINIMUM:
        c = -matvec(G[j], x)
    else:
        c = matvec(T[j], y)
    z = np.empty(nz)
    z[:nx] = x
    z[nx:] = c
    obj = quad_form(W2[j], z)
    return status, lam, c, obj


@kernel
def min_constraint_at(j, x, Sx, trace_bar):
    return quad_form(Sx[j], x) + trace_bar[j]


@kernel
def select_index(mode, prev, x, eps, Sx, F2, trace_bar, quad_prev, rtol, tie_rtol):
    """Gain-selection step on a bank; returns ``(index, fallback_used)``.

    ``quad_prev`` is the constraint quadratic at the minimiser under the previous
    gain (without its trace term). Method 2 treats costs within
    ``tie_rtol * (1 + |min|)`` of the window minimum as tied and takes the largest.
    """
    m = trace_bar.shape[0]
    if mode == MODE_FIXED or prev == m - 1:
        return prev, False
    if mode == MODE_METHOD1:
        lo = prev
        hi = m - 1
        if quad_prev + trace_bar[hi] <= eps:
            cand = hi
        else:
            # invariant: lo feasible, hi infeasible
            while hi - lo > 1:
                mid = (lo + hi) // 2
                if quad_prev + trace_bar[mid] <= eps:
                    lo = mid
                else:
                    hi = mid
            cand = lo
        tol = rtol * (1.0 + abs(eps))
        if cand == prev or min_constraint_at(cand, x, Sx, trace_bar) <= eps + tol:
            return cand, False
        # The candidate gain leaves the online problem infeasible; fall back to
        # the largest index whose minimised constraint still fits.
        lo = prev
        hi = cand
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if min_constraint_at(mid, x, Sx, trace_bar) <= eps + tol:
                lo = mid
            else:
                hi = mid
        return lo, True

    # Method 2: largest feasible index by the minimised constraint, then cost scan.
    lo = prev
    hi = m - 1
    if min_constraint_at(hi, x, Sx, trace_bar) <= eps:
        top = hi
    else:
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if min_constraint_at(mid, x, Sx, trace_bar) <= eps:
                lo = mid
            else:
                hi = mid
        top = lo
    if top == prev:
        return prev, False
    costs = np.empty(top - prev + 1)
    for j in range(prev, top + 1):
        costs[j - prev] = quad_form(F2[j], x)
    vmin = costs.min()
    cut = vmin + tie_rtol * (1.0 + abs(vmin))
    best = prev
    for j in range(prev, top + 1):
        if costs[j - prev] <= cut:
            best = j
    return best, False


@kernel
def rollout(mode, idx0, x0, eps0, W, A, B, Q, R, C, gamma, gains, T, d, TA, TB,
            W1, W2, G, Sx, F2, trace_bar, dcut, rtol, max_iter, tie_rtol):
    """Closed-loop simulation of the control algorithm over ``W.shape[0]`` steps.

    ``W`` holds the disturbance realisations. Returns the state, input, epsilon,
    gain index, multiplier and stage-cost histories, plus ``(status, k_fail,
    fallbacks)`` where a nonzero status marks the step whose QCQP failed.
    """
    steps = W.shape[0]
    nx = x0.shape[0]
    nu = B.shape[1]
    nc = d.shape[1]
    N = nc // nu
    X = np.zeros((steps + 1, nx))
    U = np.zeros((steps, nu))
    EPS = np.zeros(steps)
    IDX = np.zeros(steps, dtype=np.int64)
    LAM = np.zeros(steps)
    STAGE = np.zeros(steps)
    X[0] = x0
    x = x0.copy()
    idx = idx0
    eps = eps0
    c_prev = np.zeros(nc)
    z = np.zeros(nx + nc)
    fallbacks = 0
    for k in range(steps):
        if k > 0:
            # tail of the previous optimal sequence, scored with the previous gain
            z[:nx] = x
            z[nx : nx + nc - nu] = c_prev[nu:]
            z[nx + nc - nu :] = 0.0
            eps = quad_form(W1[idx], z) + trace_bar[idx]
            if mode != MODE_FIXED:
                quad_prev = min_constraint_at(idx, x, Sx, trace_bar) - trace_bar[idx]
                new_idx, fb = select_index(mode, idx, x, eps, Sx, F2, trace_bar, quad_prev, rtol, tie_rtol)
                if fb:
                    fallbacks += 1
                idx = new_idx
        status, lam, c, obj = solve_from_bank(idx, x, eps, T, d, TA, TB, W1, W2, G, trace_bar,
                                              dcut, rtol, max_iter)
        EPS[k] = eps
        IDX[k] = idx
        LAM[k] = lam
        if status < 0:
            return X, U, EPS, IDX, LAM, STAGE, status, k, fallbacks
        u = matvec(gains[idx], x) + c[:nu]
        U[k] = u
        STAGE[k] = quad_form(Q, x) + quad_form(R, u)
        x = matvec(A, x) + matvec(B, u) + W[k]
        X[k + 1] = x
        c_prev[:] = c
    return X, U, EPS, IDX, LAM, STAGE, 0, -1, fallbacks


@kernel
def next_step_batch(j, x, c, Wd, A, B, gains, T, d, TA, TB, W1, W2, G, trace_bar, dcut, rtol, max_iter):
    """One step from a frozen state under many disturbance draws, gain index ``j`` held fixed.

    Returns the next budgets, the next optimal costs and the number of failed solves.
    """
    nx = x.shape[0]
    nu = B.shape[1]
    nc = c.shape[0]
    n = Wd.shape[0]
    u = matvec(gains[j], x) + c[:nu]
    x_nom = matvec(A, x) + matvec(B, u)
    z = np.zeros(nx + nc)
    z[nx : nx + nc - nu] = c[nu:]
    EPS = np.empty(n)
    J = np.empty(n)
    failures = 0
    for s in range(n):
        xn = x_nom + Wd[s]
        z[:nx] = xn
        eps = quad_form(W1[j], z) + trace_bar[j]
        status, lam, cn, obj = solve_from_bank(j, xn, eps, T, d, TA, TB, W1, W2, G, trace_bar,
                                               dcut, rtol, max_iter)
        EPS[s] = eps
        J[s] = obj
        if status < 0:
            failures += 1
    return EPS, J, failures

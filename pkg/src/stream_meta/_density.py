"""Compiled log density + gradient kernel behind :class:`stream_meta.model.Model`.

Arguments are flat arrays so the kernel can be compiled once for all model
kinds; block positions arrive in ``idx`` (``-1`` when absent) and prior
hyperparameters in ``pr``.
"""

import math

import numpy as np
from numba import njit

LOG_2PI = math.log(2.0 * math.pi)
LOG_2_OVER_PI = math.log(2.0 / math.pi)

# positions in the ``idx`` array
(I_ALPHA, I_TA, I_TB, I_TC, I_BETA, I_TAU_A, I_TAU_B, I_SP2, I_LP, I_ALPHA_S, I_DA, I_DB,
 I_BETA_S, I_TAU_C, I_TAU_D, I_TAU_S, I_SIG) = range(17)
BLOCK_ORDER = ("alpha_theta", "theta_a", "theta_b", "theta_c", "beta_theta", "tau_a2", "tau_b2",
               "sigma_p2", "l_p", "alpha_sigma", "delta_a", "delta_b", "beta_sigma", "tau_c2",
               "tau_d2", "tau_sigma2", "sigma2")

# positions in the ``pr`` array
(P_M_AT, P_S_AT, P_M_AS, P_S_AS, P_ETA_A, P_ETA_B, P_ETA_C, P_ETA_D, P_ETA_E, P_ETA_L,
 P_ETA_SIG, P_FE_VAR, P_JITTER, P_MAX_JITTER) = range(14)


@njit(cache=True, error_model="numpy")
def half_cauchy(u, eta):
    a = 2.0 * (u - math.log(eta))
    if a > 700.0:
        return -math.inf, -1.0
    r2 = math.exp(a)
    return LOG_2_OVER_PI - math.log(eta) - math.log1p(r2) + u, 1.0 - 2.0 * r2 / (1.0 + r2)


@njit(cache=True, error_model="numpy")
def cholesky_into(A, out):
    n = A.shape[0]
    for j in range(n):
        s = A[j, j]
        for k in range(j):
            s -= out[j, k] * out[j, k]
        if not s > 0.0:
            return False
        d = math.sqrt(s)
        out[j, j] = d
        for i in range(j + 1, n):
            s = A[i, j]
            for k in range(j):
                s -= out[i, k] * out[j, k]
            out[i, j] = s / d
        for i in range(j):
            out[i, j] = 0.0
    return True


@njit(cache=True, error_model="numpy")
def forward_solve(Lf, B):
    """Solve Lf X = B for lower-triangular Lf; B is 2-D and overwritten."""
    n = Lf.shape[0]
    for c in range(B.shape[1]):
        for i in range(n):
            s = B[i, c]
            for k in range(i):
                s -= Lf[i, k] * B[k, c]
            B[i, c] = s / Lf[i, i]


@njit(cache=True, error_model="numpy")
def gp_factor(sin2, log_l, jitter, max_jitter, R, chol):
    """Fill ``R`` (correlation) and ``chol`` (its jittered factor); returns the jitter or -1."""
    L = sin2.shape[0]
    inv_l2 = math.exp(-2.0 * log_l)
    for a in range(L):
        for b in range(L):
            R[a, b] = math.exp(-2.0 * sin2[a, b] * inv_l2)
    A = R.copy()
    j = jitter
    while True:
        for a in range(L):
            A[a, a] = R[a, a] + j
        if cholesky_into(A, chol):
            return j
        if j >= max_jitter:
            return -1.0
        j *= 10.0


@njit(cache=True, error_model="numpy")
def _effect_prior(u, g, start, size, tau_pos, eta, fe_var, want_grad, eff):
    """Write the centered effect into ``eff`` and return its prior log density."""
    if tau_pos < 0:
        ss = 0.0
        for k in range(size):
            v = u[start + k]
            eff[k] = v
            ss += v * v
        return -0.5 * ss / fe_var - 0.5 * size * (LOG_2PI + math.log(fe_var))
    ut = u[tau_pos]
    sd = math.exp(0.5 * ut)
    ss = 0.0
    for k in range(size):
        z = u[start + k]
        eff[k] = sd * z
        ss += z * z
    hc, _ = half_cauchy(ut, eta)
    return -0.5 * ss - 0.5 * size * LOG_2PI + hc


@njit(cache=True, error_model="numpy")
def _effect_grad(u, g, start, size, tau_pos, eta, fe_var, eff, gsum):
    if tau_pos < 0:
        for k in range(size):
            g[start + k] = gsum[k] - eff[k] / fe_var
        return
    ut = u[tau_pos]
    sd = math.exp(0.5 * ut)
    dot = 0.0
    for k in range(size):
        g[start + k] = sd * gsum[k] - u[start + k]
        dot += gsum[k] * eff[k]
    _, dhc = half_cauchy(ut, eta)
    g[tau_pos] = 0.5 * dot + dhc


@njit(cache=True, error_model="numpy")
def log_density(u, g, want_grad, idx, sizes, pr, m_bt, s_bt, m_bs, s_bs,
                y, s2, X, ia, ib, ic, shape, log_n, gamma_const, fixed_inv, fixed_logvar,
                time_kind, sin2):
    """Log density at ``u``; fills ``g`` with the gradient when ``want_grad``.

    ``sizes`` = (m, q, J, K, L); ``time_kind`` 0 none, 1 month dummies, 2 GP.
    Returns ``-inf`` for states where the density cannot be evaluated.
    """
    m, q, J, K, L = sizes[0], sizes[1], sizes[2], sizes[3], sizes[4]
    vm = idx[I_SIG] >= 0
    if want_grad:
        for k in range(g.size):
            g[k] = 0.0

    alpha = u[idx[I_ALPHA]]
    d = (alpha - pr[P_M_AT]) / pr[P_S_AT]
    lp = -0.5 * d * d - math.log(pr[P_S_AT]) - 0.5 * LOG_2PI
    bt0 = idx[I_BETA]
    for k in range(q):
        d = (u[bt0 + k] - m_bt[k]) / s_bt[k]
        lp += -0.5 * d * d - math.log(s_bt[k]) - 0.5 * LOG_2PI

    ea = np.empty(J)
    eb = np.empty(K)
    lp += _effect_prior(u, g, idx[I_TA], J, idx[I_TAU_A], pr[P_ETA_A], pr[P_FE_VAR], want_grad, ea)
    lp += _effect_prior(u, g, idx[I_TB], K, idx[I_TAU_B], pr[P_ETA_B], pr[P_FE_VAR], want_grad, eb)

    ec = np.zeros(L)
    tc0 = idx[I_TC]
    R = np.empty((L, L))
    chol = np.empty((L, L))
    if time_kind == 1:
        ss = 0.0
        for k in range(L):
            ec[k] = u[tc0 + k]
            ss += ec[k] * ec[k]
        lp += -0.5 * ss / pr[P_FE_VAR] - 0.5 * L * (LOG_2PI + math.log(pr[P_FE_VAR]))
    elif time_kind == 2:
        us = u[idx[I_SP2]]
        ul = u[idx[I_LP]]
        hs, _ = half_cauchy(us, pr[P_ETA_SIG])
        hl, _ = half_cauchy(ul, pr[P_ETA_L])
        ss = 0.0
        for k in range(L):
            ss += u[tc0 + k] * u[tc0 + k]
        lp += -0.5 * ss - 0.5 * L * LOG_2PI + hs + hl
        if L > 0:
            if gp_factor(sin2, ul, pr[P_JITTER], pr[P_MAX_JITTER], R, chol) < 0:
                return -math.inf
            sp = math.exp(0.5 * us)
            for a in range(L):
                s = 0.0
                for b in range(a + 1):
                    s += chol[a, b] * u[tc0 + b]
                ec[a] = sp * s

    theta = np.empty(m)
    for i in range(m):
        t = alpha + ea[ia[i]] + eb[ib[i]]
        if time_kind > 0:
            t += ec[ic[i]]
        for k in range(q):
            t += X[i, k] * u[bt0 + k]
        theta[i] = t

    r = np.empty(m)
    e = np.empty(m)
    da = np.empty(J)
    db = np.empty(K)
    sg0 = idx[I_SIG]
    as0 = idx[I_ALPHA_S]
    bs0 = idx[I_BETA_S]
    e2 = 0.0
    tau_s2 = 1.0
    dhts = 0.0
    alpha_s = 0.0
    if vm:
        alpha_s = u[as0]
        d = (alpha_s - pr[P_M_AS]) / pr[P_S_AS]
        lp += -0.5 * d * d - math.log(pr[P_S_AS]) - 0.5 * LOG_2PI
        for k in range(q):
            d = (u[bs0 + k] - m_bs[k]) / s_bs[k]
            lp += -0.5 * d * d - math.log(s_bs[k]) - 0.5 * LOG_2PI
        lp += _effect_prior(u, g, idx[I_DA], J, idx[I_TAU_C], pr[P_ETA_C], pr[P_FE_VAR], want_grad, da)
        lp += _effect_prior(u, g, idx[I_DB], K, idx[I_TAU_D], pr[P_ETA_D], pr[P_FE_VAR], want_grad, db)
        uts = u[idx[I_TAU_S]]
        tau_s2 = math.exp(uts)
        hts, dhts = half_cauchy(uts, pr[P_ETA_E])
        lp += hts - 0.5 * m * (LOG_2PI + uts) + gamma_const
        for i in range(m):
            ls = u[sg0 + i]
            inv = math.exp(-ls)
            res = y[i] - theta[i]
            r2inv = res * res * inv
            s2inv = s2[i] * inv
            lp += -0.5 * LOG_2PI - 0.5 * ls - 0.5 * r2inv
            lp += -shape[i] * ls - shape[i] * s2inv
            mu = alpha_s + da[ia[i]] + db[ib[i]] - log_n[i]
            for k in range(q):
                mu += X[i, k] * u[bs0 + k]
            e[i] = ls - mu
            e2 += e[i] * e[i]
            r[i] = res * inv
            if want_grad:
                g[sg0 + i] = (-0.5 + 0.5 * r2inv) + shape[i] * (s2inv - 1.0) - e[i] / tau_s2
        lp -= 0.5 * e2 / tau_s2
    else:
        ss = 0.0
        for i in range(m):
            res = y[i] - theta[i]
            r[i] = res * fixed_inv[i]
            ss += res * r[i]
        lp += -0.5 * m * LOG_2PI - 0.5 * fixed_logvar - 0.5 * ss

    if not want_grad:
        return lp

    # mean-model gradient
    sr = 0.0
    ga = np.zeros(J)
    gb = np.zeros(K)
    gc = np.zeros(L)
    for i in range(m):
        sr += r[i]
        ga[ia[i]] += r[i]
        gb[ib[i]] += r[i]
        if time_kind > 0:
            gc[ic[i]] += r[i]
    g[idx[I_ALPHA]] = sr - (alpha - pr[P_M_AT]) / (pr[P_S_AT] * pr[P_S_AT])
    for k in range(q):
        s = 0.0
        for i in range(m):
            s += X[i, k] * r[i]
        g[bt0 + k] = s - (u[bt0 + k] - m_bt[k]) / (s_bt[k] * s_bt[k])
    _effect_grad(u, g, idx[I_TA], J, idx[I_TAU_A], pr[P_ETA_A], pr[P_FE_VAR], ea, ga)
    _effect_grad(u, g, idx[I_TB], K, idx[I_TAU_B], pr[P_ETA_B], pr[P_FE_VAR], eb, gb)

    if time_kind == 1:
        for k in range(L):
            g[tc0 + k] = gc[k] - ec[k] / pr[P_FE_VAR]
    elif time_kind == 2:
        us = u[idx[I_SP2]]
        ul = u[idx[I_LP]]
        _, dhs = half_cauchy(us, pr[P_ETA_SIG])
        _, dhl = half_cauchy(ul, pr[P_ETA_L])
        if L == 0:
            g[idx[I_SP2]] = dhs
            g[idx[I_LP]] = dhl
        else:
            sp = math.exp(0.5 * us)
            # w = sp * chol^T gc
            w = np.empty(L)
            for b in range(L):
                s = 0.0
                for a in range(b, L):
                    s += chol[a, b] * gc[a]
                w[b] = sp * s
                g[tc0 + b] = w[b] - u[tc0 + b]
            dot = 0.0
            for a in range(L):
                dot += gc[a] * ec[a]
            g[idx[I_SP2]] = 0.5 * dot + dhs
            # d chol / d log l_p = chol * Phi(chol^-1 dR chol^-T)
            scale = 4.0 * math.exp(-2.0 * ul)
            B = np.empty((L, L))
            for a in range(L):
                for b in range(L):
                    B[a, b] = R[a, b] * sin2[a, b] * scale
            forward_solve(chol, B)
            Bt = B.T.copy()
            forward_solve(chol, Bt)
            dl = 0.0
            for a in range(L):
                s = 0.5 * Bt[a, a] * u[tc0 + a]
                for b in range(a):
                    s += Bt[a, b] * u[tc0 + b]
                dl += w[a] * s
            g[idx[I_LP]] = dl + dhl

    if vm:
        rs = np.empty(m)
        for i in range(m):
            rs[i] = e[i] / tau_s2
        gda = np.zeros(J)
        gdb = np.zeros(K)
        srs = 0.0
        for i in range(m):
            srs += rs[i]
            gda[ia[i]] += rs[i]
            gdb[ib[i]] += rs[i]
        g[as0] = srs - (alpha_s - pr[P_M_AS]) / (pr[P_S_AS] * pr[P_S_AS])
        for k in range(q):
            s = 0.0
            for i in range(m):
                s += X[i, k] * rs[i]
            g[bs0 + k] = s - (u[bs0 + k] - m_bs[k]) / (s_bs[k] * s_bs[k])
        _effect_grad(u, g, idx[I_DA], J, idx[I_TAU_C], pr[P_ETA_C], pr[P_FE_VAR], da, gda)
        _effect_grad(u, g, idx[I_DB], K, idx[I_TAU_D], pr[P_ETA_D], pr[P_FE_VAR], db, gdb)
        g[idx[I_TAU_S]] = -0.5 * m + 0.5 * e2 / tau_s2 + dhts
    return lp

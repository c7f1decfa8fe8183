"""Numba-compiled block kernels for the chain integrator.

Same contracts as the numpy kernels; loops are written per chain with
scalar accumulators, so summation order (and therefore low-order bits)
differs from the vectorized path. Kernels release the GIL so blocks can
run on a thread pool.
"""

from __future__ import annotations

import numpy as np
from numba import njit

_LOG_2PI = float(np.log(2.0 * np.pi))


@njit(cache=True, nogil=True)
def _mix_eps_one(z, w, mu_t, var_t, a, lbuf, out):
    """Noise prediction of a diffused mixture at one point z."""
    k, d = mu_t.shape
    maxl = -np.inf
    for i in range(k):
        quad = 0.0
        logdet = 0.0
        for j in range(d):
            diff = z[j] - mu_t[i, j]
            quad += diff * diff / var_t[i, j]
            logdet += np.log(var_t[i, j])
        logdet += d * _LOG_2PI
        li = np.log(w[i]) - 0.5 * (quad + logdet)
        lbuf[i] = li
        if li > maxl:
            maxl = li
    ssum = 0.0
    for i in range(k):
        lbuf[i] = np.exp(lbuf[i] - maxl)
        ssum += lbuf[i]
    for j in range(d):
        out[j] = 0.0
    for i in range(k):
        r = lbuf[i] / ssum
        for j in range(d):
            out[j] += r * (mu_t[i, j] - z[j]) / var_t[i, j]
    c = -np.sqrt(1.0 - a)
    for j in range(d):
        out[j] = c * out[j]


@njit(cache=True, nogil=True)
def _decode_one(z, dec, has_dec, x):
    d = z.shape[0]
    if has_dec:
        q = dec.shape[0]
        for qi in range(q):
            s = 0.0
            for j in range(d):
                s += dec[qi, j] * z[j]
            x[qi] = s
    else:
        for j in range(d):
            x[j] = z[j]


@njit(cache=True, nogil=True)
def _energy_val_one(z0, anchors, tau, e, dec, has_dec, x, wbuf):
    """<phi(decode(z0)), e> at one point."""
    m, q = anchors.shape
    _decode_one(z0, dec, has_dec, x)
    maxl = -np.inf
    for i in range(m):
        s = 0.0
        for qi in range(q):
            diff = x[qi] - anchors[i, qi]
            s += diff * diff
        li = -s / tau
        wbuf[i] = li
        if li > maxl:
            maxl = li
    nrm2 = 0.0
    for i in range(m):
        wbuf[i] = np.exp(wbuf[i] - maxl)
        nrm2 += wbuf[i] * wbuf[i]
    nrm = np.sqrt(nrm2)
    val = 0.0
    for i in range(m):
        val += (wbuf[i] / nrm) * e[i]
    return val


@njit(cache=True, nogil=True)
def _energy_grad_one(z0, anchors, tau, e, dec, has_dec, x, wbuf, ubuf, gx, out):
    """Gradient of <phi(decode(z)), e> at one point; sign applied by caller."""
    m, q = anchors.shape
    d = z0.shape[0]
    _decode_one(z0, dec, has_dec, x)
    maxl = -np.inf
    for i in range(m):
        s = 0.0
        for qi in range(q):
            diff = x[qi] - anchors[i, qi]
            s += diff * diff
        li = -s / tau
        wbuf[i] = li
        if li > maxl:
            maxl = li
    nrm2 = 0.0
    for i in range(m):
        wbuf[i] = np.exp(wbuf[i] - maxl)
        nrm2 += wbuf[i] * wbuf[i]
    nrm = np.sqrt(nrm2)
    energy = 0.0
    for i in range(m):
        wbuf[i] = wbuf[i] / nrm  # now phi
        energy += wbuf[i] * e[i]
    su = 0.0
    for i in range(m):
        ubuf[i] = wbuf[i] * (e[i] - energy * wbuf[i])
        su += ubuf[i]
    c = -2.0 / tau
    for qi in range(q):
        ua = 0.0
        for i in range(m):
            ua += ubuf[i] * anchors[i, qi]
        gx[qi] = c * (x[qi] * su - ua)
    if has_dec:
        for j in range(d):
            s = 0.0
            for qi in range(q):
                s += gx[qi] * dec[qi, j]
            out[j] = s
    else:
        for j in range(d):
            out[j] = gx[j]


@njit(cache=True, nogil=True)
def _combined_energy_one(
    z, a, omega, lam_rep, lam_ret, cw, cmu_t, cvar_t, uw, umu_t, uvar_t,
    anchors, tau, e_c, e_p, dec, has_dec, lbuf, eu, ec, z0, x, wbuf,
):
    """Scalar dual energy with the noise prediction recomputed at z."""
    d = z.shape[0]
    _mix_eps_one(z, uw, umu_t, uvar_t, a, lbuf, eu)
    _mix_eps_one(z, cw, cmu_t, cvar_t, a, lbuf, ec)
    sa = np.sqrt(a)
    sb = np.sqrt(1.0 - a)
    for j in range(d):
        eps_j = eu[j] + omega * (ec[j] - eu[j])
        z0[j] = (z[j] - sb * eps_j) / sa
    rep = _energy_val_one(z0, anchors, tau, e_c, dec, has_dec, x, wbuf)
    ret = -_energy_val_one(z0, anchors, tau, e_p, dec, has_dec, x, wbuf)
    return lam_rep * rep + lam_ret * ret


@njit(cache=True, nogil=True)
def guided_block(
    z_T,
    abars,
    cw,
    cmu,
    cvar,
    uw,
    umu,
    uvar,
    omega,
    lam_rep,
    lam_ret,
    K,
    win_lo,
    win_hi,
    full_grad,
    anchors,
    tau,
    e_c,
    e_p,
    dec,
    has_dec,
    fd_h,
    normalize,
):
    B, d = z_T.shape
    N = abars.shape[0] - 1
    kc = cw.shape[0]
    ku = uw.shape[0]
    m, q = anchors.shape
    Z = z_T.copy()
    fail = np.full(B, np.int64(-1))

    kmax = max(kc, ku)
    lbuf = np.empty(kmax)
    eps_u = np.empty(d)
    eps_c = np.empty(d)
    eps = np.empty(d)
    z0 = np.empty(d)
    g_rep = np.empty(d)
    g_ret = np.empty(d)
    grad = np.empty(d)
    zp = np.empty(d)
    x = np.empty(q)
    wbuf = np.empty(m)
    ubuf = np.empty(m)
    gx = np.empty(q)
    cmu_t = np.empty((kc, d))
    cvar_t = np.empty((kc, d))
    umu_t = np.empty((ku, d))
    uvar_t = np.empty((ku, d))

    for i in range(N, 0, -1):
        a = abars[i]
        a_prev = abars[i - 1]
        sa = np.sqrt(a)
        for ii in range(kc):
            for j in range(d):
                cmu_t[ii, j] = sa * cmu[ii, j]
                cvar_t[ii, j] = a * cvar[ii, j] + (1.0 - a)
        for ii in range(ku):
            for j in range(d):
                umu_t[ii, j] = sa * umu[ii, j]
                uvar_t[ii, j] = a * uvar[ii, j] + (1.0 - a)
        sb = np.sqrt(1.0 - a)
        sap = np.sqrt(a_prev)
        sbp = np.sqrt(1.0 - a_prev)
        gate = (win_lo <= i) and (i <= win_hi)

        for b in range(B):
            if fail[b] >= 0:
                continue
            z = Z[b]
            _mix_eps_one(z, uw, umu_t, uvar_t, a, lbuf, eps_u)
            _mix_eps_one(z, cw, cmu_t, cvar_t, a, lbuf, eps_c)
            for j in range(d):
                eps[j] = eps_u[j] + omega * (eps_c[j] - eps_u[j])
            if gate:
                for _ in range(K):
                    if full_grad:
                        for j in range(d):
                            for jj in range(d):
                                zp[jj] = z[jj]
                            zp[j] = z[j] + fd_h
                            e_hi = _combined_energy_one(
                                zp, a, omega, lam_rep, lam_ret, cw, cmu_t,
                                cvar_t, uw, umu_t, uvar_t, anchors, tau, e_c,
                                e_p, dec, has_dec, lbuf, g_rep, g_ret, z0, x,
                                wbuf,
                            )
                            zp[j] = z[j] - fd_h
                            e_lo = _combined_energy_one(
                                zp, a, omega, lam_rep, lam_ret, cw, cmu_t,
                                cvar_t, uw, umu_t, uvar_t, anchors, tau, e_c,
                                e_p, dec, has_dec, lbuf, g_rep, g_ret, z0, x,
                                wbuf,
                            )
                            grad[j] = (e_hi - e_lo) / (2.0 * fd_h)
                    else:
                        for j in range(d):
                            z0[j] = (z[j] - sb * eps[j]) / sa
                        _energy_grad_one(
                            z0, anchors, tau, e_c, dec, has_dec, x, wbuf,
                            ubuf, gx, g_rep,
                        )
                        _energy_grad_one(
                            z0, anchors, tau, e_p, dec, has_dec, x, wbuf,
                            ubuf, gx, g_ret,
                        )
                        for j in range(d):
                            grad[j] = (
                                lam_rep * g_rep[j] + lam_ret * (-1.0 * g_ret[j])
                            ) / sa
                    if normalize:
                        nrm2 = 0.0
                        for j in range(d):
                            nrm2 += grad[j] * grad[j]
                        nrm = np.sqrt(nrm2)
                        if nrm > 0.0:
                            for j in range(d):
                                grad[j] = grad[j] / nrm
                    for j in range(d):
                        z[j] = z[j] - grad[j]
            bad = False
            for j in range(d):
                z0[j] = (z[j] - sb * eps[j]) / sa
                if not (np.isfinite(z[j]) and np.isfinite(z0[j])):
                    bad = True
            if bad:
                fail[b] = i
                continue
            for j in range(d):
                z[j] = sap * z0[j] + sbp * eps[j]

    for b in range(B):
        if fail[b] < 0:
            for j in range(d):
                if not np.isfinite(Z[b, j]):
                    fail[b] = 0
                    break
    return Z, fail


@njit(cache=True, nogil=True)
def vanilla_block(z_T, abars, cw, cmu, cvar, uw, umu, uvar, omega):
    B, d = z_T.shape
    N = abars.shape[0] - 1
    kc = cw.shape[0]
    ku = uw.shape[0]
    Z = z_T.copy()
    fail = np.full(B, np.int64(-1))

    kmax = max(kc, ku)
    lbuf = np.empty(kmax)
    eps_u = np.empty(d)
    eps_c = np.empty(d)
    eps = np.empty(d)
    z0 = np.empty(d)
    cmu_t = np.empty((kc, d))
    cvar_t = np.empty((kc, d))
    umu_t = np.empty((ku, d))
    uvar_t = np.empty((ku, d))

    for i in range(N, 0, -1):
        a = abars[i]
        a_prev = abars[i - 1]
        sa = np.sqrt(a)
        for ii in range(kc):
            for j in range(d):
                cmu_t[ii, j] = sa * cmu[ii, j]
                cvar_t[ii, j] = a * cvar[ii, j] + (1.0 - a)
        for ii in range(ku):
            for j in range(d):
                umu_t[ii, j] = sa * umu[ii, j]
                uvar_t[ii, j] = a * uvar[ii, j] + (1.0 - a)
        sb = np.sqrt(1.0 - a)
        sap = np.sqrt(a_prev)
        sbp = np.sqrt(1.0 - a_prev)
        for b in range(B):
            if fail[b] >= 0:
                continue
            z = Z[b]
            _mix_eps_one(z, uw, umu_t, uvar_t, a, lbuf, eps_u)
            _mix_eps_one(z, cw, cmu_t, cvar_t, a, lbuf, eps_c)
            bad = False
            for j in range(d):
                eps[j] = eps_u[j] + omega * (eps_c[j] - eps_u[j])
                z0[j] = (z[j] - sb * eps[j]) / sa
                if not np.isfinite(z0[j]):
                    bad = True
            if bad:
                fail[b] = i
                continue
            for j in range(d):
                z[j] = sap * z0[j] + sbp * eps[j]

    for b in range(B):
        if fail[b] < 0:
            for j in range(d):
                if not np.isfinite(Z[b, j]):
                    fail[b] = 0
                    break
    return Z, fail

"""Pure-numpy block kernels for the chain integrator.

Each function advances a block of chains through the full reverse process.
Expressions and reduction orders deliberately mirror the single-chain
reference path so that, per row, results are bitwise identical to it.
Non-finite latents are tolerated: the failing step is recorded per chain
and NaNs are left to propagate.
"""

from __future__ import annotations

import numpy as np

_LOG_2PI = float(np.log(2.0 * np.pi))


def _mix_eps(z, w, mu_t, var_t, a):
    """Ideal noise prediction of a diffused mixture, rows of z."""
    diff = z[:, None, :] - mu_t[None, :, :]
    quad = np.sum(diff * diff / var_t[None, :, :], axis=2)
    logdet = np.sum(np.log(var_t), axis=1) + z.shape[1] * _LOG_2PI
    lj = np.log(w)[None, :] - 0.5 * (quad + logdet[None, :])
    m = np.max(lj, axis=1, keepdims=True)
    e = np.exp(lj - m)
    r = e / np.sum(e, axis=1, keepdims=True)
    pull = (mu_t[None, :, :] - z[:, None, :]) / var_t[None, :, :]
    score = np.sum(r[:, :, None] * pull, axis=1)
    return -np.sqrt(1.0 - a) * score


def _decode(z, dec, has_dec):
    if not has_dec:
        return z
    return np.sum(z[..., None, :] * dec, axis=-1)


def _phi(x, anchors, tau):
    diff = x[:, None, :] - anchors[None, :, :]
    logits = -np.sum(diff * diff, axis=2) / tau
    m = np.max(logits, axis=1, keepdims=True)
    w = np.exp(logits - m)
    return w / np.sqrt(np.sum(w * w, axis=1, keepdims=True))


def _energy_val(z0, anchors, tau, e, dec, has_dec):
    phi = _phi(_decode(z0, dec, has_dec), anchors, tau)
    return np.sum(phi * e[None, :], axis=1)


def _energy_grad(z0, anchors, tau, e, dec, has_dec):
    """Gradient of <phi(decode(z)), e> per row; sign applied by the caller."""
    x = _decode(z0, dec, has_dec)
    diff = x[:, None, :] - anchors[None, :, :]
    logits = -np.sum(diff * diff, axis=2) / tau
    m = np.max(logits, axis=1, keepdims=True)
    w = np.exp(logits - m)
    phi = w / np.sqrt(np.sum(w * w, axis=1, keepdims=True))
    energy = np.sum(phi * e[None, :], axis=1)
    u = phi * (e[None, :] - energy[:, None] * phi)
    su = np.sum(u, axis=1)
    ua = np.sum(u[:, :, None] * anchors[None, :, :], axis=1)
    grad_x = (-2.0 / tau) * (x * su[:, None] - ua)
    if not has_dec:
        return grad_x
    return np.sum(grad_x[..., None] * dec, axis=-2)


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
    Z = z_T.astype(np.float64, copy=True)
    B, d = Z.shape
    N = abars.shape[0] - 1
    fail = np.full(B, -1, dtype=np.int64)

    for i in range(N, 0, -1):
        a = float(abars[i])
        a_prev = float(abars[i - 1])
        cmu_t = np.sqrt(a) * cmu
        cvar_t = a * cvar + (1.0 - a)
        umu_t = np.sqrt(a) * umu
        uvar_t = a * uvar + (1.0 - a)
        eps_u = _mix_eps(Z, uw, umu_t, uvar_t, a)
        eps_c = _mix_eps(Z, cw, cmu_t, cvar_t, a)
        eps = eps_u + omega * (eps_c - eps_u)

        if win_lo <= i <= win_hi:
            for _ in range(K):
                if full_grad:
                    def combined(Q):
                        qu = _mix_eps(Q, uw, umu_t, uvar_t, a)
                        qc = _mix_eps(Q, cw, cmu_t, cvar_t, a)
                        qe = qu + omega * (qc - qu)
                        q0 = (Q - np.sqrt(1.0 - a) * qe) / np.sqrt(a)
                        rep = _energy_val(q0, anchors, tau, e_c, dec, has_dec)
                        ret = -(_energy_val(q0, anchors, tau, e_p, dec, has_dec))
                        return lam_rep * rep + lam_ret * ret

                    grad = np.empty_like(Z)
                    for j in range(d):
                        zp = Z.copy()
                        zp[:, j] += fd_h
                        zm = Z.copy()
                        zm[:, j] -= fd_h
                        grad[:, j] = (combined(zp) - combined(zm)) / (2.0 * fd_h)
                else:
                    z0 = (Z - np.sqrt(1.0 - a) * eps) / np.sqrt(a)
                    g_rep = _energy_grad(z0, anchors, tau, e_c, dec, has_dec)
                    g_ret = -1.0 * _energy_grad(z0, anchors, tau, e_p, dec, has_dec)
                    grad = (lam_rep * g_rep + lam_ret * g_ret) / np.sqrt(a)
                if normalize:
                    nrm = np.sqrt(np.sum(grad * grad, axis=1, keepdims=True))
                    grad = grad / np.where(nrm > 0.0, nrm, 1.0)
                Z = Z - grad

        z0 = (Z - np.sqrt(1.0 - a) * eps) / np.sqrt(a)
        ok = np.isfinite(Z).all(axis=1) & np.isfinite(z0).all(axis=1)
        fail[~ok & (fail < 0)] = i
        Z = np.sqrt(a_prev) * z0 + np.sqrt(1.0 - a_prev) * eps

    fail[~np.isfinite(Z).all(axis=1) & (fail < 0)] = 0
    return Z, fail


def vanilla_block(z_T, abars, cw, cmu, cvar, uw, umu, uvar, omega):
    """Unguided chains: the guided loop minus the gated block."""
    Z = z_T.astype(np.float64, copy=True)
    B, d = Z.shape
    N = abars.shape[0] - 1
    fail = np.full(B, -1, dtype=np.int64)
    for i in range(N, 0, -1):
        a = float(abars[i])
        a_prev = float(abars[i - 1])
        cmu_t = np.sqrt(a) * cmu
        cvar_t = a * cvar + (1.0 - a)
        umu_t = np.sqrt(a) * umu
        uvar_t = a * uvar + (1.0 - a)
        eps_u = _mix_eps(Z, uw, umu_t, uvar_t, a)
        eps_c = _mix_eps(Z, cw, cmu_t, cvar_t, a)
        eps = eps_u + omega * (eps_c - eps_u)
        z0 = (Z - np.sqrt(1.0 - a) * eps) / np.sqrt(a)
        ok = np.isfinite(z0).all(axis=1)
        fail[~ok & (fail < 0)] = i
        Z = np.sqrt(a_prev) * z0 + np.sqrt(1.0 - a_prev) * eps
    fail[~np.isfinite(Z).all(axis=1) & (fail < 0)] = 0
    return Z, fail

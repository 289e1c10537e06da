"""Brute-force posterior marginals by exhaustive grid summation.

For fixed ``(p, alpha)`` the posterior factorises over paths, so the joint sum
is ``sum_{p, alpha} prod_j sum_{s_j} D_j AOD_j AOA_j``.  Each ``s_j`` ranges over
grid cells inside its AOD cone (``n_sigma`` standard deviations wide) and the
disk ``|s - q| <= d_j``.

The AOA factor depends on ``(p, s_j)`` only through the bearing ``beta`` of
``s_j`` seen from ``p``.  The inner sum is therefore accumulated into a fine
histogram over ``beta`` per grid position and then mapped to the orientation
grid with one matrix product against the Gaussian kernel.
"""

from __future__ import annotations

import math

import numpy as np

from mmwave_nbp.geometry import Observations, wrap_angle


def _disk_grid(center, radius, step):
    g = np.arange(-radius, radius + step, step)
    xx, yy = np.meshgrid(center[0] + g, center[1] + g, indexing="ij")
    pts = np.column_stack([xx.ravel(), yy.ravel()])
    return pts[np.hypot(*(pts - center).T) <= radius]


def posterior_marginals(obs: Observations, q, step_p=2.0, step_s=2.0, step_alpha_deg=3.0,
                        n_sigma=4.0, beta_bins=2880, chunk=512):
    """Return ``(p_grid, p_marginal, alpha_grid, alpha_marginal)``; marginals sum to 1."""
    q = np.asarray(q, dtype=float)
    d, tx, rx = obs.d, obs.theta_tx, obs.theta_rx
    sd, stx, srx = obs.noise.sigma_d, obs.noise.sigma_tx, obs.noise.sigma_rx
    P = _disk_grid(q, float(d.max()), step_p)
    A = np.deg2rad(np.arange(-180.0, 180.0, step_alpha_deg))
    centers = -math.pi + (np.arange(beta_bins) + 0.5) * (2 * math.pi / beta_bins)

    log_joint = np.zeros((len(P), len(A)))
    for j in range(obs.n_paths):
        S = _disk_grid(q, float(d[j]), step_s)
        v = S - q
        res_tx = wrap_angle(tx[j] - np.arctan2(v[:, 1], v[:, 0]))
        keep = np.abs(res_tx) <= n_sigma * stx[j]
        S, res_tx = S[keep], res_tx[keep]
        a = np.hypot(*(S - q).T)
        log_aod = -0.5 * (res_tx / stx[j]) ** 2
        # kernel[b, k]: AOA factor for bearing bin b at orientation A[k]
        kernel = np.exp(-0.5 * (wrap_angle(rx[j] - centers[:, None] + A[None, :]) / srx[j]) ** 2)
        for lo in range(0, len(P), chunk):
            p = P[lo:lo + chunk]
            dx = S[None, :, 0] - p[:, 0, None]
            dy = S[None, :, 1] - p[:, 1, None]
            b = np.hypot(dx, dy)
            base = -0.5 * ((d[j] - a[None, :] - b) / sd[j]) ** 2 + log_aod[None, :]
            m = base.max(axis=1, keepdims=True)
            w = np.exp(base - m)
            idx = ((np.arctan2(dy, dx) + math.pi) * (beta_bins / (2 * math.pi))).astype(np.int64)
            np.minimum(idx, beta_bins - 1, out=idx)
            idx += (np.arange(len(p)) * beta_bins)[:, None]
            hist = np.bincount(idx.ravel(), weights=w.ravel(),
                               minlength=len(p) * beta_bins).reshape(len(p), beta_bins)
            with np.errstate(divide="ignore"):
                log_joint[lo:lo + chunk] += m + np.log(hist @ kernel)
    log_joint -= log_joint.max()
    w = np.exp(log_joint)
    w /= w.sum()
    return P, w.sum(axis=1), A, w.sum(axis=0)


def posterior_mean_p(obs: Observations, q, **kw) -> np.ndarray:
    P, wp, _, _ = posterior_marginals(obs, q, **kw)
    return wp @ P

"""Particle-level evaluation of the three per-path factors.

For a factor node and one of its variables (the *target*), the outgoing
message is a weighted sum over incoming particle tuples of the factor
evaluated at the target value.  Each class here provides, for every target
role,

* ``evaluate(role, x, tuples, log_tw, h)`` returning two ``(N,)`` arrays: the
  log of the message at ``x`` and the log density of the matching
  *conditional proposal* (pick a tuple by weight, then sample the target from
  the factor normalised over the target);
* ``sample(role, n, tuples, tuple_p, h, rng)`` drawing from that proposal.

``h`` is a kernel bandwidth in the target's units.  With ``h > 0`` every term
of the sum is convolved with an isotropic Gaussian kernel to first order: the
residual's standard deviation grows to ``sqrt(sigma^2 + |grad r|^2 h^2)`` and
the term is scaled by ``sigma / sigma_eff``.  ``h = 0`` gives the plain sum.

``tuples`` maps a role (``"P"``, ``"S"``, ``"ALPHA"``) to an ``(M, dim)``
array; rows with the same index form one tuple.  The ``(N, M)`` intermediate
arrays are float32.
"""

from __future__ import annotations

import math

import numpy as np

from .particles import as_rng

LOG_SQRT_TWO_PI = 0.5 * math.log(2.0 * math.pi)
LOG_TWO_PI = math.log(2.0 * math.pi)
TWO_PI = 2.0 * math.pi
F32 = np.float32


def _wrap32(x):
    # residuals are squared afterwards, so the side of the +-pi seam is irrelevant
    x -= F32(TWO_PI) * np.round(x * F32(1.0 / TWO_PI))
    return x


def _row_lse(e: np.ndarray, log_w: np.ndarray | None, overwrite: bool = False) -> np.ndarray:
    """``log sum_n exp(e[:, n] + log_w[n])`` per row; uniform weights if ``log_w`` is None.

    With ``overwrite`` the float32 array ``e`` is used as scratch space.
    """
    if log_w is not None:
        e = np.add(e, log_w.astype(F32)[None, :], out=e if overwrite else None)
        offset = 0.0
    else:
        if not overwrite:
            e = e.copy()
        offset = -math.log(e.shape[1])
    m = e.max(axis=1)
    safe = np.where(np.isfinite(m), m, F32(0.0))
    e -= safe[:, None]
    np.exp(e, out=e)
    with np.errstate(divide="ignore"):
        return safe.astype(float) + np.log(e.sum(axis=1).astype(float)) + offset


def _polar(center, radius, angle) -> np.ndarray:
    return center + radius[:, None] * np.column_stack([np.cos(angle), np.sin(angle)])


def _pick(rng, n: int, tuple_p: np.ndarray | None, m: int) -> np.ndarray:
    if tuple_p is None:
        return rng.integers(0, m, size=n)
    return rng.choice(m, size=n, p=tuple_p)


class DistanceFactor:
    """Ellipse constraint ``|q - s| + |s - p| = d_hat``."""

    roles = ("P", "S")

    def __init__(self, d_hat: float, sigma: float, q):
        self.d_hat = float(d_hat)
        self.sigma = float(sigma)
        self.q = np.asarray(q, dtype=float)

    def _sigma_s_proposal(self, h):
        return math.sqrt(self.sigma ** 2 + 2.0 * h * h)

    def evaluate(self, role, x, tuples, log_tw=None, h=0.0):
        x = np.asarray(x, dtype=float)
        if role == "P":
            s = tuples["S"]
            se = math.sqrt(self.sigma ** 2 + h * h)
            mu = (self.d_hat - np.linalg.norm(s - self.q, axis=1)).astype(F32)
            dx = x[:, 0].astype(F32)[:, None] - s[:, 0].astype(F32)[None, :]
            dy = x[:, 1].astype(F32)[:, None] - s[:, 1].astype(F32)[None, :]
            b = np.sqrt(dx * dx + dy * dy)
            e = b - mu[None, :]
            e *= e
            e *= F32(-0.5 / se ** 2)
            log_t = _row_lse(e, log_tw) + math.log(self.sigma / se)
            with np.errstate(divide="ignore"):
                e -= np.log(b)
            log_c = _row_lse(e, log_tw, True) - math.log(se) - LOG_SQRT_TWO_PI - LOG_TWO_PI
            return log_t, log_c
        if role == "S":
            p = tuples["P"]
            xq = x - self.q
            a = np.hypot(xq[:, 0], xq[:, 1]).astype(F32)
            with np.errstate(invalid="ignore", divide="ignore"):
                ux = (xq[:, 0] / a).astype(F32)[:, None]
                uy = (xq[:, 1] / a).astype(F32)[:, None]
            dx = x[:, 0].astype(F32)[:, None] - p[:, 0].astype(F32)[None, :]
            dy = x[:, 1].astype(F32)[:, None] - p[:, 1].astype(F32)[None, :]
            b = np.sqrt(dx * dx + dy * dy)
            r = F32(self.d_hat) - a[:, None] - b
            # 1 + u.e with u, e the unit vectors from q and from p towards s
            with np.errstate(invalid="ignore", divide="ignore"):
                half_g2 = 1.0 + (ux * dx + uy * dy) / b
            np.nan_to_num(half_g2, copy=False, nan=1.0)
            np.clip(half_g2, 0.0, 2.0, out=half_g2)
            r2 = r * r
            sc = self._sigma_s_proposal(h)
            with np.errstate(divide="ignore"):
                lc = r2 * F32(-0.5 / sc ** 2) + np.log(half_g2)
            log_c = (_row_lse(lc, log_tw, True) - np.log(a.astype(float))
                     - math.log(sc) - LOG_SQRT_TWO_PI - LOG_TWO_PI)
            if h > 0.0:
                se2 = F32(self.sigma ** 2) + F32(2.0 * h * h) * half_g2
                lt = F32(-0.5) * r2 / se2 + F32(0.5) * np.log(F32(self.sigma ** 2) / se2)
            else:
                lt = r2 * F32(-0.5 / self.sigma ** 2)
            return _row_lse(lt, log_tw, True), log_c
        raise KeyError(role)

    def sample(self, role, n, tuples, tuple_p=None, h=0.0, rng=None):
        rng = as_rng(rng)
        out = np.empty((n, 2))
        todo = np.arange(n)
        if role == "P":
            s = tuples["S"]
            se = math.sqrt(self.sigma ** 2 + h * h)
            for _ in range(50):
                k = _pick(rng, len(todo), tuple_p, len(s))
                sk = s[k]
                rho = (self.d_hat - np.linalg.norm(sk - self.q, axis=1)
                       + se * rng.standard_normal(len(todo)))
                psi = rng.uniform(-math.pi, math.pi, len(todo))
                ok = rho > 0
                out[todo[ok]] = _polar(sk[ok], rho[ok], psi[ok])
                todo = todo[~ok]
                if todo.size == 0:
                    return out
        elif role == "S":
            p = tuples["P"]
            sc = self._sigma_s_proposal(h)
            for _ in range(50):
                k = _pick(rng, len(todo), tuple_p, len(p))
                pq = p[k] - self.q
                L = np.hypot(pq[:, 0], pq[:, 1])
                dsum = self.d_hat + sc * rng.standard_normal(len(todo))
                phi = rng.uniform(-math.pi, math.pi, len(todo))
                cos_psi = np.cos(phi - np.arctan2(pq[:, 1], pq[:, 0]))
                ok = dsum > L
                r = (dsum[ok] ** 2 - L[ok] ** 2) / (2.0 * (dsum[ok] - L[ok] * cos_psi[ok]))
                out[todo[ok]] = _polar(self.q, r, phi[ok])
                todo = todo[~ok]
                if todo.size == 0:
                    return out
        else:
            raise KeyError(role)
        # leftovers: no incoming particle leaves room for the constraint
        r = self.d_hat * np.sqrt(rng.random(todo.size))
        out[todo] = _polar(self.q, r, rng.uniform(-math.pi, math.pi, todo.size))
        return out


class AodFactor:
    """Bearing of ``s`` seen from the base station; no incoming particles."""

    roles = ("S",)

    def __init__(self, theta_hat: float, sigma: float, q, radius: float):
        self.theta_hat = float(theta_hat)
        self.sigma = float(sigma)
        self.q = np.asarray(q, dtype=float)
        self.radius = float(radius)

    def evaluate(self, role, x, tuples=None, log_tw=None, h=0.0):
        if role != "S":
            raise KeyError(role)
        xq = np.asarray(x, dtype=float) - self.q
        a = np.hypot(xq[:, 0], xq[:, 1])
        res = np.remainder(self.theta_hat - np.arctan2(xq[:, 1], xq[:, 0]) + math.pi,
                           TWO_PI) - math.pi
        with np.errstate(divide="ignore"):
            se2 = self.sigma ** 2 + h * h / (a * a)
        lf = -0.5 * res * res / se2
        log_t = lf + 0.5 * np.log(self.sigma ** 2 / se2)
        log_c = np.where(a <= self.radius,
                         lf - 0.5 * np.log(se2) - LOG_SQRT_TWO_PI
                         + math.log(2.0 / self.radius ** 2), -np.inf)
        return log_t, log_c

    def sample(self, role, n, tuples=None, tuple_p=None, h=0.0, rng=None):
        if role != "S":
            raise KeyError(role)
        rng = as_rng(rng)
        r = self.radius * np.sqrt(rng.random(n))
        with np.errstate(divide="ignore"):
            se = np.sqrt(self.sigma ** 2 + h * h / (r * r))
        phi = self.theta_hat + se * rng.standard_normal(n)
        return _polar(self.q, r, phi)


class AoaFactor:
    """Bearing of ``s`` seen from ``p``, in the mobile frame rotated by ``alpha``."""

    roles = ("P", "S", "ALPHA")

    def __init__(self, theta_hat: float, sigma: float, radius: float):
        self.theta_hat = float(theta_hat)
        self.sigma = float(sigma)
        self.radius = float(radius)

    def evaluate(self, role, x, tuples, log_tw=None, h=0.0):
        x = np.asarray(x, dtype=float)
        if role == "ALPHA":
            p, s = tuples["P"], tuples["S"]
            beta = np.arctan2(s[:, 1] - p[:, 1], s[:, 0] - p[:, 0])
            se = math.sqrt(self.sigma ** 2 + h * h)
            c = (self.theta_hat - beta).astype(F32)
            res = _wrap32(x[:, 0].astype(F32)[:, None] + c[None, :])
            res *= res
            res *= F32(-0.5 / se ** 2)
            lse = _row_lse(res, log_tw, True)
            return lse + math.log(self.sigma / se), lse - math.log(se) - LOG_SQRT_TWO_PI
        if role == "P":
            apex, alpha, sign = tuples["S"], tuples["ALPHA"][:, 0], -1.0
        elif role == "S":
            apex, alpha, sign = tuples["P"], tuples["ALPHA"][:, 0], 1.0
        else:
            raise KeyError(role)
        # direction apex -> x is theta_hat + alpha (+ pi for the mobile)
        dx = x[:, 0].astype(F32)[:, None] - apex[:, 0].astype(F32)[None, :]
        dy = x[:, 1].astype(F32)[:, None] - apex[:, 1].astype(F32)[None, :]
        if sign < 0:
            dx, dy = -dx, -dy
        t2 = dx * dx + dy * dy
        res = np.arctan2(dy, dx)
        res -= (self.theta_hat + alpha).astype(F32)[None, :]
        _wrap32(res)
        res *= res
        inside = t2 <= F32(self.radius ** 2)
        # lc: log of the factor normalised over the direction (a 1-D Gaussian)
        if h > 0.0:
            with np.errstate(divide="ignore"):
                t2 = np.divide(F32(h * h), t2, out=t2)
            t2 += F32(self.sigma ** 2)
            lc = res
            lc *= F32(-0.5)
            lc /= t2
            lc -= F32(0.5) * np.log(t2)
        else:
            lc = res
            lc *= F32(-0.5 / self.sigma ** 2)
            lc -= F32(math.log(self.sigma))
        const = math.log(2.0 / self.radius ** 2) - LOG_SQRT_TWO_PI
        if inside.all():
            lse = _row_lse(lc, log_tw, True)
            return lse + math.log(self.sigma), lse + const
        log_t = _row_lse(lc, log_tw) + math.log(self.sigma)
        lc[~inside] = -np.inf
        return log_t, _row_lse(lc, log_tw, True) + const

    def sample(self, role, n, tuples, tuple_p=None, h=0.0, rng=None):
        rng = as_rng(rng)
        if role == "ALPHA":
            p, s = tuples["P"], tuples["S"]
            k = _pick(rng, n, tuple_p, len(p))
            beta = np.arctan2(s[k, 1] - p[k, 1], s[k, 0] - p[k, 0])
            se = math.sqrt(self.sigma ** 2 + h * h)
            a = beta - self.theta_hat + se * rng.standard_normal(n)
            return (np.remainder(a + math.pi, TWO_PI) - math.pi).reshape(n, 1)
        alpha = tuples["ALPHA"][:, 0]
        k = _pick(rng, n, tuple_p, len(alpha))
        t = self.radius * np.sqrt(rng.random(n))
        with np.errstate(divide="ignore"):
            se = np.sqrt(self.sigma ** 2 + h * h / (t * t))
        direction = self.theta_hat + alpha[k] + se * rng.standard_normal(n)
        if role == "S":
            return _polar(tuples["P"][k], t, direction)
        if role == "P":
            return _polar(tuples["S"][k], -t, direction)
        raise KeyError(role)

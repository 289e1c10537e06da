"""Weighted particle sets and the sampling primitives built on them.

Samples are stored as an ``(N, dim)`` float array.  Orientation sets
(``dim == 1``) are flagged ``circular`` so that kernels use wrapped
differences and the point estimate is a circular mean.

Proposal objects share a two-method protocol, ``sample(n, rng)`` and
``log_density(x)``, which is all importance sampling needs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DegenerateOrientationError, DegenerateWeightsError
from .geometry import wrap_angle

# exp() of anything below this underflows to zero in double precision
LOG_UNDERFLOW = math.log(np.finfo(float).tiny)

# rows of the (n_eval, n_centers) kernel matrix evaluated per block
_BLOCK_ELEMENTS = 1 << 21


def as_rng(seed) -> np.random.Generator:
    return np.random.default_rng(seed)


def normalize(weights_raw) -> np.ndarray:
    """Scale non-negative weights to sum to one."""
    w = np.asarray(weights_raw, dtype=float)
    if w.size == 0 or not np.all(np.isfinite(w)) or np.any(w < 0):
        raise DegenerateWeightsError("weights must be finite and non-negative")
    total = w.sum()
    if not total > 0.0:
        raise DegenerateWeightsError("all weights are zero")
    w = w / total
    # one correction pass keeps |sum - 1| at the rounding floor
    return w / w.sum()


def normalize_log(log_weights) -> np.ndarray:
    """Normalise weights given in the log domain.

    The maximum is subtracted before exponentiating.  If even the largest
    weight would underflow in the linear domain the set is degenerate.
    """
    lw = np.asarray(log_weights, dtype=float)
    if lw.size == 0 or np.any(np.isnan(lw)) or np.any(lw == np.inf):
        raise DegenerateWeightsError("log weights must not be NaN or +inf")
    m = lw.max()
    if not m > LOG_UNDERFLOW:
        raise DegenerateWeightsError(f"all weights underflow (max log weight {m:.1f})")
    return normalize(np.exp(lw - m))


@dataclass(frozen=True, eq=False)
class ParticleSet:
    """Samples with normalised weights.

    ``samples`` has shape ``(N, dim)``; a 1-D input is read as ``dim = 1``.
    Weights are normalised on construction.
    """

    samples: np.ndarray
    weights: np.ndarray
    circular: bool = False

    def __post_init__(self):
        x = np.array(self.samples, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if x.ndim != 2 or x.shape[1] not in (1, 2) or x.shape[0] < 1:
            raise ValueError(f"samples must have shape (N, 1) or (N, 2), got {x.shape}")
        if not np.all(np.isfinite(x)):
            raise ValueError("samples must be finite")
        if self.circular:
            if x.shape[1] != 1:
                raise ValueError("circular particle sets are one-dimensional")
            x = wrap_angle(x).reshape(x.shape)
        w = normalize(np.asarray(self.weights, dtype=float).reshape(-1))
        if w.shape[0] != x.shape[0]:
            raise ValueError("samples and weights differ in length")
        x.flags.writeable = False
        w.flags.writeable = False
        object.__setattr__(self, "samples", x)
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, samples, circular: bool = False) -> "ParticleSet":
        n = np.asarray(samples).shape[0]
        return cls(samples, np.full(n, 1.0 / n), circular)

    @classmethod
    def from_log_weights(cls, samples, log_weights, circular: bool = False) -> "ParticleSet":
        return cls(samples, normalize_log(log_weights), circular)

    @classmethod
    def dirac(cls, point, circular: bool = False) -> "ParticleSet":
        return cls(np.atleast_2d(np.asarray(point, dtype=float)), np.ones(1), circular)

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def dim(self) -> int:
        return self.samples.shape[1]

    def mean(self) -> np.ndarray:
        return mmse_estimate(self)

    def covariance(self) -> np.ndarray:
        d = self.samples - mmse_estimate(self)
        if self.circular:
            d = wrap_angle(d).reshape(d.shape)
        return (self.weights[:, None] * d).T @ d

    def subsample(self, m: int, rng) -> "ParticleSet":
        """Unweighted draw of ``m`` particles (without replacement when uniform)."""
        n = len(self)
        if m >= n:
            return self
        rng = as_rng(rng)
        if np.allclose(self.weights, 1.0 / n, rtol=0.0, atol=1e-15):
            idx = rng.choice(n, size=m, replace=False)
        else:
            idx = _systematic_indices(self.weights, m, rng)
        return ParticleSet.uniform(self.samples[idx], self.circular)

    def to_csv(self, path) -> None:
        cols = ["theta"] if self.circular else (["x", "y"] if self.dim == 2 else ["x"])
        data = np.column_stack([self.samples, self.weights])
        np.savetxt(Path(path), data, delimiter=",", header=",".join(cols + ["weight"]),
                   comments="", fmt="%.17g")

    @classmethod
    def from_csv(cls, path) -> "ParticleSet":
        path = Path(path)
        header = path.read_text().splitlines()[0].split(",")
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(data[:, :-1], data[:, -1], circular=header[0] == "theta")


def _systematic_indices(weights: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    positions = (rng.random() + np.arange(n)) / n
    cdf = np.cumsum(weights)
    cdf[-1] = 1.0
    return np.minimum(np.searchsorted(cdf, positions, side="right"), len(weights) - 1)


def resample(ps: ParticleSet, seed, n: int | None = None) -> ParticleSet:
    """Systematic (low-variance) resampling to uniform weights."""
    n = len(ps) if n is None else n
    idx = _systematic_indices(ps.weights, n, as_rng(seed))
    return ParticleSet.uniform(ps.samples[idx], ps.circular)


def effective_sample_size(ps: ParticleSet) -> float:
    return float(1.0 / np.sum(ps.weights ** 2))


def mmse_estimate(ps: ParticleSet) -> np.ndarray:
    """Weighted centroid; circular mean for orientation sets."""
    if ps.circular:
        c = float(ps.weights @ np.cos(ps.samples[:, 0]))
        s = float(ps.weights @ np.sin(ps.samples[:, 0]))
        if math.hypot(c, s) < 1e-9:
            raise DegenerateOrientationError("resultant vector length is zero")
        return np.array([math.atan2(s, c)])
    return ps.weights @ ps.samples


# --- kernel density estimates ---------------------------------------------

def _sq_dist(x: np.ndarray, c: np.ndarray, circular: bool) -> np.ndarray:
    if circular:
        d = wrap_angle(x[:, 0][:, None] - c[:, 0][None, :])
        return d * d
    if x.shape[1] == 1:
        d = x[:, 0][:, None] - c[:, 0][None, :]
        return d * d
    d2 = (x * x).sum(1)[:, None] + (c * c).sum(1)[None, :] - 2.0 * (x @ c.T)
    np.maximum(d2, 0.0, out=d2)
    return d2


@dataclass(frozen=True, eq=False)
class Kde:
    """Gaussian kernel density estimate with isotropic bandwidth."""

    particles: ParticleSet
    bandwidth: float
    _uniform: bool = field(init=False, repr=False)

    def __post_init__(self):
        if not self.bandwidth > 0.0:
            raise ValueError("bandwidth must be positive")
        w = self.particles.weights
        object.__setattr__(self, "_uniform", bool(np.all(w == w[0])))

    @property
    def dim(self) -> int:
        return self.particles.dim

    @property
    def circular(self) -> bool:
        return self.particles.circular

    def log_density(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(-1, self.dim)
        c = self.particles.samples
        h2 = self.bandwidth ** 2
        log_norm = -0.5 * self.dim * math.log(2.0 * math.pi * h2)
        w = self.particles.weights
        out = np.empty(x.shape[0])
        step = max(1, _BLOCK_ELEMENTS // len(c))
        for i in range(0, x.shape[0], step):
            e = _sq_dist(x[i:i + step], c, self.circular)
            e *= -0.5 / h2
            m = e.max(axis=1)
            e -= m[:, None]
            np.exp(e, out=e)
            if self._uniform:
                tot = e.sum(axis=1) * w[0]
            else:
                tot = e @ w
            with np.errstate(divide="ignore"):
                out[i:i + step] = m + np.log(tot)
        return out + log_norm

    def density(self, x) -> np.ndarray:
        return np.exp(self.log_density(x))

    def sample(self, n: int, rng) -> np.ndarray:
        rng = as_rng(rng)
        ps = self.particles
        if self._uniform:
            idx = rng.integers(0, len(ps), size=n)
        else:
            idx = rng.choice(len(ps), size=n, p=ps.weights)
        x = ps.samples[idx] + self.bandwidth * rng.standard_normal((n, self.dim))
        if self.circular:
            x = wrap_angle(x).reshape(x.shape)
        return x


def kde_density(kde: Kde, x) -> float | np.ndarray:
    """Mixture density at ``x``; a single point returns a float."""
    x = np.asarray(x, dtype=float)
    vals = kde.density(x)
    if x.ndim <= 1 and vals.size == 1:
        return float(vals[0])
    return vals


# --- proposals --------------------------------------------------------------

@dataclass(frozen=True)
class DiskRegion:
    """Uniform-by-area disk."""

    center: tuple[float, float]
    radius: float
    dim = 2
    circular = False

    def __post_init__(self):
        if not self.radius > 0.0:
            raise ValueError("disk radius must be positive")
        object.__setattr__(self, "center", tuple(map(float, self.center)))

    def sample(self, n: int, rng) -> np.ndarray:
        rng = as_rng(rng)
        r = self.radius * np.sqrt(rng.random(n))
        phi = rng.uniform(-math.pi, math.pi, n)
        return np.column_stack([self.center[0] + r * np.cos(phi),
                                self.center[1] + r * np.sin(phi)])

    def log_density(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(-1, 2)
        inside = np.hypot(x[:, 0] - self.center[0], x[:, 1] - self.center[1]) <= self.radius
        return np.where(inside, -math.log(math.pi * self.radius ** 2), -np.inf)


@dataclass(frozen=True)
class IntervalRegion:
    """Uniform interval; the default covers a full turn for orientations."""

    lo: float = -math.pi
    hi: float = math.pi
    circular: bool = True
    dim = 1

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError("interval must satisfy lo < hi")

    def sample(self, n: int, rng) -> np.ndarray:
        x = as_rng(rng).uniform(self.lo, self.hi, n)
        if self.circular:
            x = wrap_angle(x)
        return np.asarray(x).reshape(n, 1)

    def log_density(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(-1)
        if self.circular and self.hi - self.lo >= 2 * math.pi:
            return np.full(x.shape, -math.log(self.hi - self.lo))
        inside = (x >= self.lo) & (x <= self.hi)
        return np.where(inside, -math.log(self.hi - self.lo), -np.inf)


ProposalRegion = DiskRegion | IntervalRegion


def sample_proposal(region, n: int, seed) -> ParticleSet:
    if n < 1:
        raise ValueError("n must be at least 1")
    return ParticleSet.uniform(region.sample(n, seed), circular=region.circular)


class KdeProposal:
    def __init__(self, kde: Kde):
        self.kde = kde
        self.dim = kde.dim
        self.circular = kde.circular

    def sample(self, n, rng):
        return self.kde.sample(n, rng)

    def log_density(self, x):
        return self.kde.log_density(x)


class Mixture:
    """Finite mixture of proposals; component counts are drawn multinomially."""

    def __init__(self, components: Sequence[tuple[float, object]]):
        comps = [(float(w), c) for w, c in components if w > 0.0]
        if not comps:
            raise ValueError("mixture needs at least one positive-weight component")
        total = sum(w for w, _ in comps)
        self.weights = np.array([w / total for w, _ in comps])
        self.components = [c for _, c in comps]
        self.dim = self.components[0].dim
        self.circular = getattr(self.components[0], "circular", False)

    def sample(self, n, rng):
        rng = as_rng(rng)
        counts = rng.multinomial(n, self.weights)
        parts = [c.sample(k, rng) for c, k in zip(self.components, counts) if k > 0]
        return np.concatenate(parts, axis=0).reshape(n, self.dim)

    def log_density(self, x):
        logs = np.stack([math.log(w) + c.log_density(x)
                         for w, c in zip(self.weights, self.components)])
        m = logs.max(axis=0)
        finite = np.isfinite(m)
        out = np.full(m.shape, -np.inf)
        out[finite] = m[finite] + np.log(np.exp(logs[:, finite] - m[finite]).sum(axis=0))
        return out


def importance_sample(log_target, proposal, n: int, rng) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``n`` samples from ``proposal`` and return them with log weights.

    ``log_target`` maps an ``(n, dim)`` array to unnormalised log densities.
    """
    x = proposal.sample(n, rng)
    return x, log_target(x) - proposal.log_density(x)

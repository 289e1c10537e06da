"""Scenario geometry, the per-path measurement model and its likelihood factors.

A base station at ``q`` sends a burst that reaches the mobile at ``p`` only
through single-bounce NLOS paths, each hitting a point of incidence ``s_j``.
Every path yields a triplet (distance, angle of departure, angle of arrival);
the angle of arrival is measured in the mobile's frame, rotated by ``alpha``.

All angles live on (-pi, pi].  Point arguments of the vectorised functions
accept anything ``numpy`` can broadcast to shape ``(..., 2)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .errors import DegenerateGeometryError, InsufficientPathsError

SPEED_OF_LIGHT = 299_792_458.0  # m/s
MIN_PATHS = 3

TWO_PI = 2.0 * math.pi


class Point2(NamedTuple):
    x: float
    y: float


def wrap_angle(x):
    """Wrap angles to the half-open interval (-pi, pi].

    Works on scalars and arrays; scalars come back as ``float``.
    """
    a = np.asarray(x, dtype=float)
    out = a - TWO_PI * np.ceil((a - math.pi) / TWO_PI)
    # rounding in the subtraction can land exactly on (or just below) -pi
    out = np.where(out <= -math.pi, out + TWO_PI, out)
    if out.ndim == 0:
        return float(out)
    return out


@dataclass(frozen=True)
class Pose:
    position: Point2
    orientation: float

    def __post_init__(self):
        object.__setattr__(self, "position", Point2(*map(float, self.position)))
        object.__setattr__(self, "orientation", wrap_angle(self.orientation))


@dataclass(frozen=True)
class PathTriple:
    d: float
    theta_tx: float
    theta_rx: float

    def __post_init__(self):
        for name in ("d", "theta_tx", "theta_rx"):
            object.__setattr__(self, name, float(getattr(self, name)))


@dataclass(frozen=True)
class NoiseSpec:
    """Per-path measurement standard deviations (metres, radians, radians)."""

    sigma_d: tuple[float, ...]
    sigma_tx: tuple[float, ...]
    sigma_rx: tuple[float, ...]

    def __post_init__(self):
        for name in ("sigma_d", "sigma_tx", "sigma_rx"):
            vals = tuple(float(v) for v in getattr(self, name))
            if not all(math.isfinite(v) and v > 0.0 for v in vals):
                raise ValueError(f"{name} must be strictly positive, got {vals}")
            object.__setattr__(self, name, vals)
        if not len(self.sigma_d) == len(self.sigma_tx) == len(self.sigma_rx):
            raise ValueError("noise arrays must have one entry per path")

    @classmethod
    def uniform(cls, n_paths: int, sigma_d: float, sigma_angle: float,
                sigma_rx: float | None = None) -> "NoiseSpec":
        """Equal noise on every path; ``sigma_rx`` defaults to ``sigma_angle``."""
        rx = sigma_angle if sigma_rx is None else sigma_rx
        return cls((sigma_d,) * n_paths, (sigma_angle,) * n_paths, (rx,) * n_paths)

    @property
    def n_paths(self) -> int:
        return len(self.sigma_d)


@dataclass(frozen=True)
class Scenario:
    base_station: Point2
    mobile: Pose
    incidence_points: tuple[Point2, ...]

    def __post_init__(self):
        object.__setattr__(self, "base_station", Point2(*map(float, self.base_station)))
        pts = tuple(Point2(*map(float, s)) for s in self.incidence_points)
        object.__setattr__(self, "incidence_points", pts)
        if len(pts) < MIN_PATHS:
            raise InsufficientPathsError(
                f"need at least {MIN_PATHS} NLOS paths, got {len(pts)}")
        for s in pts:
            if s == self.base_station or s == self.mobile.position:
                raise DegenerateGeometryError(
                    f"incidence point {s} coincides with the base station or mobile")

    @property
    def n_paths(self) -> int:
        return len(self.incidence_points)

    def translated(self, t) -> "Scenario":
        tx, ty = map(float, t)
        shift = lambda pt: Point2(pt.x + tx, pt.y + ty)  # noqa: E731
        return Scenario(
            shift(self.base_station),
            Pose(shift(self.mobile.position), self.mobile.orientation),
            tuple(shift(s) for s in self.incidence_points),
        )


def paper_scenario() -> Scenario:
    """The three-path evaluation geometry: q at the origin, mobile at (70, 70) rotated 45 deg."""
    return Scenario(
        base_station=Point2(0.0, 0.0),
        mobile=Pose(Point2(70.0, 70.0), math.radians(45.0)),
        incidence_points=(Point2(20.0, 10.0), Point2(80.0, -10.0), Point2(40.0, 0.0)),
    )


@dataclass(frozen=True)
class Observations:
    triplets: tuple[PathTriple, ...]
    noise: NoiseSpec

    def __post_init__(self):
        object.__setattr__(self, "triplets", tuple(self.triplets))
        if len(self.triplets) < MIN_PATHS:
            raise InsufficientPathsError(
                f"need at least {MIN_PATHS} observation triplets, got {len(self.triplets)}")
        if self.noise.n_paths != len(self.triplets):
            raise ValueError("noise spec and observations disagree on the number of paths")

    @property
    def n_paths(self) -> int:
        return len(self.triplets)

    @property
    def d(self) -> np.ndarray:
        return np.array([t.d for t in self.triplets])

    @property
    def theta_tx(self) -> np.ndarray:
        return np.array([t.theta_tx for t in self.triplets])

    @property
    def theta_rx(self) -> np.ndarray:
        return np.array([t.theta_rx for t in self.triplets])

    def as_array(self) -> np.ndarray:
        """Measurement vector as a ``(J, 3)`` array of (d, theta_tx, theta_rx)."""
        return np.array([[t.d, t.theta_tx, t.theta_rx] for t in self.triplets])

    def drop_path(self, j: int) -> "Observations":
        keep = [i for i in range(self.n_paths) if i != j]
        noise = NoiseSpec(
            tuple(self.noise.sigma_d[i] for i in keep),
            tuple(self.noise.sigma_tx[i] for i in keep),
            tuple(self.noise.sigma_rx[i] for i in keep),
        )
        return Observations(tuple(self.triplets[i] for i in keep), noise)


@dataclass(frozen=True)
class StateVector:
    """Position, orientation and points of incidence, in that order."""

    mobile: Pose
    incidence_points: tuple[Point2, ...]

    def incidence_array(self) -> np.ndarray:
        return np.array(self.incidence_points, dtype=float).reshape(-1, 2)


def distance_from_toa(tau: float) -> float:
    return SPEED_OF_LIGHT * tau


def toa_from_distance(d: float) -> float:
    return d / SPEED_OF_LIGHT


def bearing(frm, to):
    """Four-quadrant angle of the vector ``to - frm``."""
    diff = np.asarray(to, dtype=float) - np.asarray(frm, dtype=float)
    return np.arctan2(diff[..., 1], diff[..., 0])


def true_path_parameters(scenario: Scenario, j: int) -> PathTriple:
    """Noiseless (distance, AOD, AOA) of path ``j``."""
    if not 0 <= j < scenario.n_paths:
        raise IndexError(f"path index {j} out of range for {scenario.n_paths} paths")
    q = np.array(scenario.base_station)
    p = np.array(scenario.mobile.position)
    s = np.array(scenario.incidence_points[j])
    if np.array_equal(s, q) or np.array_equal(s, p):
        raise DegenerateGeometryError("incidence point coincides with an endpoint")
    d = float(np.linalg.norm(q - s) + np.linalg.norm(s - p))
    theta_tx = wrap_angle(math.atan2(s[1] - q[1], s[0] - q[0]))
    theta_rx = wrap_angle(math.atan2(s[1] - p[1], s[0] - p[0]) - scenario.mobile.orientation)
    return PathTriple(d, theta_tx, theta_rx)


def noiseless_observations(scenario: Scenario, noise: NoiseSpec) -> Observations:
    triplets = tuple(true_path_parameters(scenario, j) for j in range(scenario.n_paths))
    return Observations(triplets, noise)


def sample_observations(scenario: Scenario, noise: NoiseSpec, seed) -> Observations:
    """Draw one noisy measurement vector.

    ``seed`` is anything accepted by :func:`numpy.random.default_rng`.  The
    Gaussian draws are taken as one ``(J, 3)`` block so a given seed maps to a
    fixed realisation regardless of caller.
    """
    if noise.n_paths != scenario.n_paths:
        raise ValueError("noise spec and scenario disagree on the number of paths")
    rng = np.random.default_rng(seed)
    eps = rng.standard_normal((scenario.n_paths, 3))
    triplets = []
    for j in range(scenario.n_paths):
        t = true_path_parameters(scenario, j)
        triplets.append(PathTriple(
            t.d + noise.sigma_d[j] * eps[j, 0],
            wrap_angle(t.theta_tx + noise.sigma_tx[j] * eps[j, 1]),
            wrap_angle(t.theta_rx + noise.sigma_rx[j] * eps[j, 2]),
        ))
    return Observations(tuple(triplets), noise)


# --- likelihood factors (log domain, unnormalised) ------------------------

def distance_residual(d_hat, p, q, s):
    p, q, s = (np.asarray(a, dtype=float) for a in (p, q, s))
    return d_hat - np.linalg.norm(q - s, axis=-1) - np.linalg.norm(s - p, axis=-1)


def aod_residual(theta_hat, q, s):
    return wrap_angle(theta_hat - bearing(q, s))


def aoa_residual(theta_hat, p, s, alpha):
    return wrap_angle(theta_hat - bearing(p, s) + alpha)


def log_factor_distance(d_hat, p, q, s, sigma):
    r = distance_residual(d_hat, p, q, s)
    return -0.5 * (r / sigma) ** 2


def log_factor_aod(theta_hat, q, s, sigma):
    r = aod_residual(theta_hat, q, s)
    return -0.5 * (r / sigma) ** 2


def log_factor_aoa(theta_hat, p, s, alpha, sigma):
    r = aoa_residual(theta_hat, p, s, alpha)
    return -0.5 * (r / sigma) ** 2


def log_likelihood(obs: Observations, q, state: StateVector) -> float:
    """Sum of all ``3J`` log factors at one joint state."""
    p = np.array(state.mobile.position)
    alpha = state.mobile.orientation
    total = 0.0
    for j, t in enumerate(obs.triplets):
        s = np.array(state.incidence_points[j])
        total += float(log_factor_distance(t.d, p, q, s, obs.noise.sigma_d[j]))
        total += float(log_factor_aod(t.theta_tx, q, s, obs.noise.sigma_tx[j]))
        total += float(log_factor_aoa(t.theta_rx, p, s, alpha, obs.noise.sigma_rx[j]))
    return total


def scenario_state(scenario: Scenario) -> StateVector:
    return StateVector(scenario.mobile, scenario.incidence_points)


def as_points(points: Sequence) -> np.ndarray:
    return np.asarray(points, dtype=float).reshape(-1, 2)

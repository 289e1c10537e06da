"""Grid-search least-squares benchmark.

With the orientation fixed at a trial value, every path gives two linear
equations in the mobile position ``p`` and the base-station-to-incidence range
``r_j``::

    p - r_j (u(theta_tx_j) + u(theta_rx_j + alpha)) = q - d_j u(theta_rx_j + alpha)

with ``u(phi) = (cos phi, sin phi)``.  One unweighted linear solve is done per
grid orientation and the smallest residual among geometrically valid
solutions (``0 <= r_j <= d_j``) wins.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import EstimationFailedError, SingularGeometryError
from .geometry import MIN_PATHS, Observations, Point2, Pose, StateVector, wrap_angle
from .errors import InsufficientPathsError

DEFAULT_DELTA_ALPHA = 0.01  # rad


@dataclass(frozen=True)
class TrialGrid:
    """Trial orientations ``wrap(i * delta_alpha)``, sorted, covering (-pi, pi]."""

    delta_alpha: float = DEFAULT_DELTA_ALPHA

    def __post_init__(self):
        if not (math.isfinite(self.delta_alpha) and 0.0 < self.delta_alpha <= math.pi):
            raise ValueError(f"delta_alpha must lie in (0, pi], got {self.delta_alpha}")

    def __len__(self) -> int:
        return math.ceil(2.0 * math.pi / self.delta_alpha)

    @property
    def values(self) -> np.ndarray:
        return np.sort(wrap_angle(np.arange(len(self)) * self.delta_alpha))


@dataclass(frozen=True)
class LsSolution:
    p_hat: Point2
    r_hat: tuple[float, ...]
    alpha_trial: float
    residual_norm: float
    valid: bool


def _unit(phi):
    return np.stack([np.cos(phi), np.sin(phi)], axis=-1)


def linear_system(obs: Observations, q_star, alpha: float) -> tuple[np.ndarray, np.ndarray]:
    """Design matrix ``(2J, J+2)`` and right-hand side for one trial orientation."""
    J = obs.n_paths
    q = np.asarray(q_star, dtype=float)
    u_tx = _unit(obs.theta_tx)
    u_rx = _unit(obs.theta_rx + alpha)
    A = np.zeros((2 * J, J + 2))
    b = np.empty(2 * J)
    for j in range(J):
        rows = slice(2 * j, 2 * j + 2)
        A[rows, 0:2] = np.eye(2)
        A[rows, 2 + j] = -(u_tx[j] + u_rx[j])
        b[rows] = q - obs.d[j] * u_rx[j]
    return A, b


def solve_trial(obs: Observations, q_star, alpha: float) -> LsSolution:
    """Least-squares position and ranges for one trial orientation.

    Raises
    ------
    SingularGeometryError
        If the design matrix is rank deficient.
    """
    if obs.n_paths < MIN_PATHS:
        raise InsufficientPathsError(f"need at least {MIN_PATHS} paths")
    A, b = linear_system(obs, q_star, alpha)
    x, _, rank, _ = np.linalg.lstsq(A, b, rcond=None)
    if rank < A.shape[1]:
        raise SingularGeometryError(f"rank {rank} < {A.shape[1]} at alpha={alpha:.6f}")
    res = float(np.linalg.norm(A @ x - b))
    r = tuple(float(v) for v in x[2:])
    valid = all(0.0 <= rj <= dj for rj, dj in zip(r, obs.d))
    return LsSolution(Point2(float(x[0]), float(x[1])), r, wrap_angle(alpha), res, valid)


def select_best(solutions: list[LsSolution]) -> LsSolution:
    """Minimum residual among valid solutions, else overall; ties go to the smallest alpha."""
    if not solutions:
        raise EstimationFailedError("no solvable trial orientation")
    pool = [s for s in solutions if s.valid] or solutions
    return min(pool, key=lambda s: (s.residual_norm, s.alpha_trial))


def grid_search(obs: Observations, q_star, grid: TrialGrid | None = None) -> StateVector:
    """Grid-search estimate of position, orientation and incidence points."""
    grid = grid or TrialGrid()
    sols = []
    for a in grid.values:
        try:
            sols.append(solve_trial(obs, q_star, float(a)))
        except SingularGeometryError:
            continue
    if not sols:
        raise EstimationFailedError("all trial orientations gave singular systems")
    best = select_best(sols)
    q = np.asarray(q_star, dtype=float)
    s = q + np.asarray(best.r_hat)[:, None] * _unit(obs.theta_tx)
    return StateVector(Pose(best.p_hat, best.alpha_trial), tuple(Point2(*row) for row in s))

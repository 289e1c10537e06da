"""Joint localisation, orientation estimation and mapping from single-snapshot mmWave paths.

Nonparametric belief propagation over a factor graph of per-path distance,
angle-of-departure and angle-of-arrival likelihoods, with a grid-search
least-squares baseline and a Monte Carlo harness.
"""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    ConfigError,
    DegenerateGeometryError,
    DegenerateOrientationError,
    DegenerateWeightsError,
    EstimationFailedError,
    InsufficientPathsError,
    MmwaveNbpError,
    SingularGeometryError,
)
from .geometry import (  # noqa: E402
    NoiseSpec,
    Observations,
    PathTriple,
    Point2,
    Pose,
    Scenario,
    StateVector,
    paper_scenario,
    sample_observations,
    wrap_angle,
)

__all__ = [
    "__version__",
    "ConfigError",
    "DegenerateGeometryError",
    "DegenerateOrientationError",
    "DegenerateWeightsError",
    "EstimationFailedError",
    "InsufficientPathsError",
    "MmwaveNbpError",
    "SingularGeometryError",
    "NoiseSpec",
    "Observations",
    "PathTriple",
    "Point2",
    "Pose",
    "Scenario",
    "StateVector",
    "paper_scenario",
    "sample_observations",
    "wrap_angle",
]

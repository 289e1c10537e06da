"""Experiment configuration: a flat ``key = value`` text format with dotted keys.

Example::

    # three-path geometry
    scenario.q = 0 0
    scenario.p = 70 70
    scenario.alpha_deg = 45
    scenario.s = 20 10; 80 -10; 40 0
    noise.sigma_d_m = 0.2
    noise.sigma_angle_deg = 1 2 4 8
    engine.n_particles = 2000
    experiment.n_trials = 100
    experiment.master_seed = 7

Blank lines and ``#`` comments are ignored.  Unknown keys are an error so a
typo never silently falls back to a default.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

from .errors import ConfigError
from .geometry import NoiseSpec, Point2, Pose, Scenario, paper_scenario
from .ls_baseline import DEFAULT_DELTA_ALPHA
from .nbp import EngineConfig

KNOWN_BASELINES = frozenset({"ls"})


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: Scenario = field(default_factory=paper_scenario)
    sigma_d: float = 0.2  # m
    noise_deg: tuple[float, ...] = (1.0,)  # sigma_tx = sigma_rx sweep
    engine: EngineConfig = field(default_factory=EngineConfig)
    n_trials: int = 100
    baselines: frozenset[str] = frozenset({"ls"})
    output_dir: Path = Path("results")
    master_seed: int = 0
    ls_delta_alpha: float = DEFAULT_DELTA_ALPHA
    workers: int = 1

    def __post_init__(self):
        if self.n_trials < 1:
            raise ConfigError("n_trials must be at least 1")
        if not self.noise_deg:
            raise ConfigError("the noise sweep is empty")
        if any(not (math.isfinite(v) and v > 0) for v in self.noise_deg):
            raise ConfigError(f"noise levels must be positive, got {self.noise_deg}")
        if not self.sigma_d > 0:
            raise ConfigError("sigma_d must be positive")
        unknown = set(self.baselines) - KNOWN_BASELINES
        if unknown:
            raise ConfigError(f"unknown baselines: {sorted(unknown)}")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")
        if self.master_seed < 0:
            raise ConfigError("master_seed must be non-negative")

    @property
    def noise_levels(self) -> tuple[NoiseSpec, ...]:
        J = self.scenario.n_paths
        return tuple(NoiseSpec.uniform(J, self.sigma_d, math.radians(v)) for v in self.noise_deg)

    def to_dict(self) -> dict:
        sc = self.scenario
        return {
            "scenario": {
                "q": list(sc.base_station),
                "p": list(sc.mobile.position),
                "alpha_deg": math.degrees(sc.mobile.orientation),
                "s": [list(s) for s in sc.incidence_points],
            },
            "noise": {"sigma_d_m": self.sigma_d, "sigma_angle_deg": list(self.noise_deg)},
            "engine": self.engine.to_dict(),
            "experiment": {
                "n_trials": self.n_trials,
                "master_seed": self.master_seed,
                "baselines": sorted(self.baselines),
                "ls_delta_alpha_rad": self.ls_delta_alpha,
                "output_dir": str(self.output_dir),
                "workers": self.workers,
            },
        }


def paper_scale(cfg: ExperimentConfig) -> ExperimentConfig:
    """The full-size setting: 1000 trials with 10000 particles (hours of CPU time)."""
    return replace(cfg, n_trials=1000, engine=replace(cfg.engine, n_particles=10_000))


# --- parsing --------------------------------------------------------------

def _floats(text: str, n: int | None = None) -> tuple[float, ...]:
    try:
        vals = tuple(float(t) for t in text.replace(",", " ").split())
    except ValueError as exc:
        raise ConfigError(f"expected numbers, got {text!r}") from exc
    if n is not None and len(vals) != n:
        raise ConfigError(f"expected {n} numbers, got {text!r}")
    return vals


def _point(text: str) -> Point2:
    return Point2(*_floats(text, 2))


def _int(text: str) -> int:
    try:
        return int(text)
    except ValueError as exc:
        raise ConfigError(f"expected an integer, got {text!r}") from exc


def _float(text: str) -> float:
    return _floats(text, 1)[0]


def _opt_float(text: str) -> float | None:
    return None if text.lower() in ("", "none", "auto") else _float(text)


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


_ENGINE_KEYS: dict[str, tuple[str, Callable[[str], object]]] = {
    "engine.n_particles": ("n_particles", _int),
    "engine.n_iterations": ("n_iterations", _int),
    "engine.incoming_subsample": ("incoming_subsample", _int),
    "engine.bandwidth_position_m": ("bandwidth_position", _opt_float),
    "engine.bandwidth_orientation_deg": (
        "bandwidth_orientation", lambda t: None if _opt_float(t) is None else math.radians(_float(t))),
    "engine.max_retries": ("max_retries", _int),
    "engine.on_degenerate": ("on_degenerate", str),
    "engine.seed": ("seed", _int),
    "engine.belief_feedback": ("belief_feedback", _bool),
}


def parse_text(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Parse the dotted key-value format on top of ``base`` (defaults if omitted)."""
    cfg = base or ExperimentConfig()
    sc = cfg.scenario
    q, p, alpha = sc.base_station, sc.mobile.position, sc.mobile.orientation
    points = list(sc.incidence_points)
    engine_kw: dict[str, object] = {}
    top: dict[str, object] = {}

    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        try:
            if key == "scenario.q":
                q = _point(value)
            elif key == "scenario.p":
                p = _point(value)
            elif key == "scenario.alpha_deg":
                alpha = math.radians(_float(value))
            elif key == "scenario.alpha_rad":
                alpha = _float(value)
            elif key == "scenario.s":
                points = [_point(chunk) for chunk in value.split(";") if chunk.strip()]
            elif key == "noise.sigma_d_m":
                top["sigma_d"] = _float(value)
            elif key == "noise.sigma_angle_deg":
                top["noise_deg"] = _floats(value)
            elif key in _ENGINE_KEYS:
                name, conv = _ENGINE_KEYS[key]
                engine_kw[name] = conv(value)
            elif key == "experiment.n_trials":
                top["n_trials"] = _int(value)
            elif key == "experiment.master_seed":
                top["master_seed"] = _int(value)
            elif key == "experiment.output_dir":
                top["output_dir"] = Path(value)
            elif key == "experiment.baselines":
                top["baselines"] = frozenset(v for v in value.replace(",", " ").split())
            elif key == "experiment.ls_delta_alpha_rad":
                top["ls_delta_alpha"] = _float(value)
            elif key == "experiment.workers":
                top["workers"] = _int(value)
            else:
                raise ConfigError(f"unknown key {key!r}")
        except ConfigError as exc:
            raise ConfigError(f"line {lineno}: {exc}") from None

    try:
        scenario = Scenario(q, Pose(p, alpha), tuple(points))
        engine = replace(cfg.engine, **engine_kw)
        return replace(cfg, scenario=scenario, engine=engine, **top)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def load(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_text(text)


def dump_text(cfg: ExperimentConfig) -> str:
    """Inverse of :func:`parse_text` for every key it understands."""
    sc = cfg.scenario
    e = cfg.engine
    fmt = lambda vals: " ".join(repr(float(v)) for v in vals)  # noqa: E731
    lines = [
        f"scenario.q = {fmt(sc.base_station)}",
        f"scenario.p = {fmt(sc.mobile.position)}",
        f"scenario.alpha_rad = {sc.mobile.orientation!r}",
        "scenario.s = " + "; ".join(fmt(s) for s in sc.incidence_points),
        f"noise.sigma_d_m = {cfg.sigma_d!r}",
        f"noise.sigma_angle_deg = {fmt(cfg.noise_deg)}",
        f"engine.n_particles = {e.n_particles}",
        f"engine.n_iterations = {e.n_iterations}",
        f"engine.incoming_subsample = {e.incoming_subsample}",
        f"engine.bandwidth_position_m = {e.bandwidth_position if e.bandwidth_position else 'auto'}",
        "engine.bandwidth_orientation_deg = "
        + (repr(math.degrees(e.bandwidth_orientation)) if e.bandwidth_orientation else "auto"),
        f"engine.max_retries = {e.max_retries}",
        f"engine.on_degenerate = {e.on_degenerate}",
        f"engine.seed = {e.seed}",
        f"engine.belief_feedback = {str(e.belief_feedback).lower()}",
        f"experiment.n_trials = {cfg.n_trials}",
        f"experiment.master_seed = {cfg.master_seed}",
        f"experiment.output_dir = {cfg.output_dir}",
        f"experiment.baselines = {' '.join(sorted(cfg.baselines))}",
        f"experiment.ls_delta_alpha_rad = {cfg.ls_delta_alpha!r}",
        f"experiment.workers = {cfg.workers}",
    ]
    return "\n".join(lines) + "\n"


__all__ = ["ExperimentConfig", "parse_text", "load", "dump_text", "paper_scale"]

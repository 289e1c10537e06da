"""Monte Carlo runner: paired NBP / LS trials, RMSE aggregation and CSV export."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import __version__
from .config import ExperimentConfig
from .errors import EstimationFailedError
from .geometry import Observations, StateVector, sample_observations, wrap_angle
from .ls_baseline import TrialGrid, grid_search
from .nbp import EngineConfig, run as run_engine

log = logging.getLogger(__name__)

ITERATION_CSV = "rmse_vs_iteration.csv"
NOISE_CSV = "rmse_vs_noise.csv"
METADATA_JSON = "run_metadata.json"


def trial_seeds(master_seed: int, noise_idx: int, trial_idx: int) -> tuple[np.random.SeedSequence, int]:
    """Observation seed sequence and engine seed for one trial.

    Both depend only on ``(master_seed, noise_idx, trial_idx)``, never on
    execution order.
    """
    obs_seq = np.random.SeedSequence(master_seed, spawn_key=(noise_idx, trial_idx, 0))
    engine_seq = np.random.SeedSequence(master_seed, spawn_key=(noise_idx, trial_idx, 1))
    return obs_seq, int(engine_seq.generate_state(1, np.uint64)[0] >> np.uint64(1))


def observation_checksum(obs: Observations) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(obs.as_array(), dtype="<f8").tobytes())
    for arr in (obs.noise.sigma_d, obs.noise.sigma_tx, obs.noise.sigma_rx):
        h.update(np.asarray(arr, dtype="<f8").tobytes())
    return h.hexdigest()[:16]


def compute_rmse(errors: Iterable) -> float:
    """Root of the mean squared Euclidean norm; scalars count as 1-D vectors."""
    sq = [float(np.sum(np.square(np.asarray(e, dtype=float)))) for e in errors]
    if not sq:
        raise ValueError("compute_rmse needs at least one error vector")
    return math.sqrt(sum(sq) / len(sq))


@dataclass(frozen=True)
class StateError:
    p: np.ndarray  # (2,)
    alpha: float  # wrapped, rad
    s: np.ndarray  # (2J,)

    @classmethod
    def between(cls, est: StateVector, truth: StateVector) -> "StateError":
        return cls(
            np.subtract(est.mobile.position, truth.mobile.position),
            wrap_angle(est.mobile.orientation - truth.mobile.orientation),
            (est.incidence_array() - truth.incidence_array()).ravel(),
        )


@dataclass(frozen=True)
class TrialResult:
    noise_idx: int
    trial_idx: int
    checksum: str
    nbp: tuple[StateError, ...]  # one per iteration
    ls: StateError | None
    flags: tuple[tuple[int, str, str], ...] = ()
    ls_failed: bool = False
    ls_checksum: str | None = None


def run_trial(cfg: ExperimentConfig, noise_idx: int, trial_idx: int,
              engine: EngineConfig | None = None) -> TrialResult:
    noise = cfg.noise_levels[noise_idx]
    obs_seq, engine_seed = trial_seeds(cfg.master_seed, noise_idx, trial_idx)
    obs = sample_observations(cfg.scenario, noise, obs_seq)
    truth = StateVector(cfg.scenario.mobile, cfg.scenario.incidence_points)
    checksum = observation_checksum(obs)
    q = cfg.scenario.base_station

    ecfg = replace(engine or cfg.engine, seed=engine_seed)
    res = run_engine(obs, q, ecfg)
    nbp = tuple(StateError.between(e, truth) for e in res.trace)

    ls, ls_failed, ls_sum = None, False, None
    if "ls" in cfg.baselines:
        ls_sum = observation_checksum(obs)
        try:
            ls = StateError.between(grid_search(obs, q, TrialGrid(cfg.ls_delta_alpha)), truth)
        except EstimationFailedError:
            ls_failed = True
            log.warning("LS baseline failed on noise %d trial %d", noise_idx, trial_idx)
    return TrialResult(noise_idx, trial_idx, checksum, nbp, ls, tuple(res.flags.events),
                       ls_failed, ls_sum)


def _run_trial_args(args):
    return run_trial(*args)


@dataclass
class ExperimentReport:
    config: ExperimentConfig
    # (noise_deg, iteration, rmse_p, rmse_alpha, rmse_s)
    iteration_rows: list[tuple[float, int, float, float, float]] = field(default_factory=list)
    # (noise_deg, estimator, rmse_p, rmse_alpha, rmse_s)
    noise_rows: list[tuple[float, str, float, float, float]] = field(default_factory=list)
    trials: list[TrialResult] = field(default_factory=list)

    def rmse(self, noise_deg: float, iteration: int) -> tuple[float, float, float]:
        for row in self.iteration_rows:
            if row[0] == noise_deg and row[1] == iteration:
                return row[2:]
        raise KeyError((noise_deg, iteration))

    def estimator_rmse(self, noise_deg: float, estimator: str) -> tuple[float, float, float]:
        for row in self.noise_rows:
            if row[0] == noise_deg and row[1] == estimator:
                return row[2:]
        raise KeyError((noise_deg, estimator))

    @property
    def flagged_trials(self) -> list[tuple[int, int]]:
        return [(t.noise_idx, t.trial_idx) for t in self.trials if t.flags or t.ls_failed]


def _rmse_triplet(errors: Sequence[StateError]) -> tuple[float, float, float]:
    return (compute_rmse(e.p for e in errors), compute_rmse(e.alpha for e in errors),
            compute_rmse(e.s for e in errors))


def aggregate(cfg: ExperimentConfig, trials: Sequence[TrialResult]) -> ExperimentReport:
    """Deterministic reduction keyed by (noise, trial) index."""
    trials = sorted(trials, key=lambda t: (t.noise_idx, t.trial_idx))
    report = ExperimentReport(cfg, trials=list(trials))
    n_iter = cfg.engine.n_iterations
    for i, deg in enumerate(cfg.noise_deg):
        group = [t for t in trials if t.noise_idx == i]
        for it in range(n_iter):
            report.iteration_rows.append((deg, it + 1, *_rmse_triplet([t.nbp[it] for t in group])))
        report.noise_rows.append((deg, "nbp", *_rmse_triplet([t.nbp[-1] for t in group])))
        ls = [t.ls for t in group if t.ls is not None]
        if "ls" in cfg.baselines and ls:
            report.noise_rows.append((deg, "ls", *_rmse_triplet(ls)))
    return report


def run_experiment(cfg: ExperimentConfig,
                   progress: Callable[[TrialResult], None] | None = None) -> ExperimentReport:
    """Run every (noise level, trial) pair and aggregate the RMSEs."""
    jobs = [(cfg, i, t) for i in range(len(cfg.noise_deg)) for t in range(cfg.n_trials)]
    results: list[TrialResult] = []
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            for r in pool.map(_run_trial_args, jobs):
                results.append(r)
                if progress:
                    progress(r)
    else:
        for job in jobs:
            r = run_trial(*job)
            results.append(r)
            if progress:
                progress(r)
    return aggregate(cfg, results)


def _fmt(x: float) -> str:
    return repr(float(x))


def export_report(report: ExperimentReport, output_dir) -> list[Path]:
    """Write the two CSV tables and the metadata file; returns their paths."""
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / ITERATION_CSV, out / NOISE_CSV, out / METADATA_JSON]

    with open(paths[0], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["noise_deg", "iteration", "rmse_p_m", "rmse_alpha_rad", "rmse_s_m"])
        for deg, it, p, a, s in report.iteration_rows:
            w.writerow([_fmt(deg), it, _fmt(p), _fmt(a), _fmt(s)])
    with open(paths[1], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["noise_deg", "estimator", "rmse_p_m", "rmse_alpha_rad", "rmse_s_m"])
        for deg, est, p, a, s in report.noise_rows:
            w.writerow([_fmt(deg), est, _fmt(p), _fmt(a), _fmt(s)])

    cfg = report.config
    meta = {
        "package_version": __version__,
        "config": cfg.to_dict(),
        "resolved_engine": {
            str(deg): _resolved_engine(cfg, noise).to_dict()
            for deg, noise in zip(cfg.noise_deg, cfg.noise_levels)
        },
        "trials": [
            {
                "noise_deg": cfg.noise_deg[t.noise_idx],
                "trial": t.trial_idx,
                "engine_seed": trial_seeds(cfg.master_seed, t.noise_idx, t.trial_idx)[1],
                "observation_checksum": t.checksum,
                "flags": [list(f) for f in t.flags],
                "ls_failed": t.ls_failed,
            }
            for t in report.trials
        ],
    }
    with open(paths[2], "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return paths


def _resolved_engine(cfg: ExperimentConfig, noise) -> EngineConfig:
    # bandwidth defaults depend only on the noise spec
    from .geometry import noiseless_observations

    return cfg.engine.resolved(noiseless_observations(cfg.scenario, noise))

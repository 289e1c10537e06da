"""Nonparametric belief propagation on the single-snapshot SLAM factor graph.

Representations
---------------
* variable-to-factor messages and beliefs: uniformly weighted particle sets
  (normalised, then resampled after every update);
* factor-to-variable messages: :class:`FactorMessage`, the weighted sum over
  incoming particle tuples of the factor.  It can be evaluated anywhere,
  sampled through the factor's conditional proposal, and turned into a
  particle set by importance sampling (:func:`filter_message`).

Products at a variable node multiply the previous belief's kernel density
estimate with the incoming factor messages.  Each factor message is smoothed
with the same kernel bandwidth as the belief (first-order convolution of each
term), which plays the role of the per-message KDE.  Samples for all products
at a node come from one shared defensive-mixture draw.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from . import factor_graph as fg
from .errors import DegenerateWeightsError
from .factors import AoaFactor, AodFactor, DistanceFactor
from .geometry import Observations, Point2, Pose, StateVector
from .particles import (
    DiskRegion,
    IntervalRegion,
    Kde,
    ParticleSet,
    mmse_estimate,
    normalize_log,
    resample,
)

log = logging.getLogger(__name__)

DEFAULT_MIN_BW_POSITION = 0.5  # m
DEFAULT_MIN_BW_ORIENTATION = math.radians(0.5)


@dataclass(frozen=True)
class EngineConfig:
    """Engine settings.

    Bandwidths left as ``None`` are filled in from the noise levels by
    :meth:`resolved`: ``max(0.5 m, 2 sigma_d)`` for positions and
    ``max(0.5 deg, sigma_rx)`` for the orientation.
    """

    n_particles: int = 2000
    n_iterations: int = 6
    bandwidth_position: float | None = None
    bandwidth_orientation: float | None = None
    incoming_subsample: int = 512
    seed: int = 0
    max_retries: int = 3
    on_degenerate: str = "flag"  # or "raise"
    # defensive-mixture shares
    uniform_share: float = 0.1
    guide_share: float = 0.6
    belief_share: float = 0.5
    # multiply the previous belief into outgoing messages and beliefs
    belief_feedback: bool = True

    def __post_init__(self):
        for name in ("n_particles", "n_iterations", "incoming_subsample"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")
        for name in ("bandwidth_position", "bandwidth_orientation"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ValueError(f"{name} must be positive")
        if self.on_degenerate not in ("flag", "raise"):
            raise ValueError("on_degenerate must be 'flag' or 'raise'")
        if self.max_retries < 0:
            raise ValueError("max_retries must be non-negative")
        if not 0.0 < self.uniform_share < 1.0:
            raise ValueError("uniform_share must lie in (0, 1)")

    @property
    def subsample(self) -> int:
        return min(self.n_particles, self.incoming_subsample)

    def resolved(self, obs: Observations) -> "EngineConfig":
        bw_p = self.bandwidth_position
        if bw_p is None:
            bw_p = max(DEFAULT_MIN_BW_POSITION, 2.0 * max(obs.noise.sigma_d))
        bw_a = self.bandwidth_orientation
        if bw_a is None:
            bw_a = max(DEFAULT_MIN_BW_ORIENTATION, max(obs.noise.sigma_rx))
        return replace(self, bandwidth_position=float(bw_p), bandwidth_orientation=float(bw_a))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EngineFlags:
    """Degenerate-weight events as (iteration, edge label, outcome)."""

    events: list[tuple[int, str, str]] = field(default_factory=list)

    @property
    def recovered(self) -> int:
        return sum(1 for e in self.events if e[2] == "recovered")

    @property
    def fallbacks(self) -> int:
        return sum(1 for e in self.events if e[2] == "fallback")

    def __bool__(self) -> bool:
        return bool(self.events)


@dataclass
class EngineResult:
    trace: list[StateVector]
    initial_estimate: StateVector
    beliefs: dict[str, ParticleSet]
    messages: dict[tuple[str, str], object]
    flags: EngineFlags
    config: EngineConfig


def _rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(key)))


def _role(var: str) -> str:
    if var in (fg.P, fg.ALPHA):
        return var
    if var.startswith("S"):
        return "S"
    raise KeyError(var)


def _logaddexp_weighted(parts: Sequence[tuple[float, np.ndarray]]) -> np.ndarray:
    out = None
    for share, lq in parts:
        term = math.log(share) + lq
        out = term if out is None else np.logaddexp(out, term)
    return out


def incoming_tuples(incoming: Mapping[str, ParticleSet], m: int, rng):
    """Pair size-``m`` subsamples of the incoming messages into tuples.

    Identical tuples are merged; returns ``(tuples, log_weights, probs)``.
    One-particle (Dirac) messages are broadcast to every tuple.
    """
    cols = {}
    for role in sorted(incoming):
        ps = incoming[role]
        cols[role] = ps.samples if len(ps) == 1 else ps.subsample(m, rng).samples
    n = max(len(v) for v in cols.values()) if cols else 0
    cols = {k: np.repeat(v, n, axis=0) if len(v) == 1 else v for k, v in cols.items()}
    if not cols:
        return {}, None, None
    stacked = np.concatenate([cols[k] for k in sorted(cols)], axis=1)
    uniq, counts = np.unique(stacked, axis=0, return_counts=True)
    out, c = {}, 0
    for k in sorted(cols):
        d = cols[k].shape[1]
        out[k] = uniq[:, c:c + d]
        c += d
    p = counts / counts.sum()
    return out, np.log(p), p


class FactorMessage:
    """A factor-to-variable message kept as a sum over incoming particle tuples."""

    def __init__(self, factor, role: str, tuples=None, log_tw=None, tuple_p=None,
                 h: float = 0.0, circular: bool = False):
        self.factor = factor
        self.role = role
        self.tuples = tuples or {}
        self.log_tw = log_tw
        self.tuple_p = tuple_p
        self.h = float(h)
        self.circular = circular
        self.dim = 1 if role == "ALPHA" else 2

    @classmethod
    def from_incoming(cls, factor, role, incoming: Mapping[str, ParticleSet], m: int, rng,
                      h: float = 0.0) -> "FactorMessage":
        tuples, log_tw, p = incoming_tuples(incoming, m, rng)
        return cls(factor, role, tuples, log_tw, p, h, circular=role == "ALPHA")

    def smoothed(self, h: float) -> "FactorMessage":
        return FactorMessage(self.factor, self.role, self.tuples, self.log_tw, self.tuple_p,
                             h, self.circular)

    def widened(self, k: float = 2.0) -> "FactorMessage":
        return self.smoothed(k * self.h)

    def evaluate(self, x):
        """``(log message value, log conditional-proposal density)`` at ``x``."""
        return self.factor.evaluate(self.role, x, self.tuples, self.log_tw, self.h)

    def log_density(self, x):
        return self.evaluate(x)[0]

    def sample(self, n, rng):
        return self.factor.sample(self.role, n, self.tuples, self.tuple_p, self.h, rng)

    def particles(self, region, config: "EngineConfig", rng, guide: Kde | None = None,
                  resample_output: bool = True) -> ParticleSet:
        ps, _ = _importance(self, region, config, rng, guide, resample_output)
        return ps


def _kde_evaluate(kde: Kde, x):
    ld = kde.log_density(x)
    return ld, ld


def _evaluate(obj, x):
    if isinstance(obj, Kde):
        return _kde_evaluate(obj, x)
    if hasattr(obj, "evaluate"):
        return obj.evaluate(x)
    ld = obj.log_density(x)
    return ld, ld


def _widen(obj, k=2.0):
    if isinstance(obj, Kde):
        return Kde(obj.particles, k * obj.bandwidth)
    return obj.widened(k)


# --- message filtering ----------------------------------------------------

def _importance(msg: FactorMessage, region, config, rng, guide=None, resample_output=True):
    n = config.n_particles
    outcome = "ok"
    for attempt in range(config.max_retries + 1):
        u_share = config.uniform_share
        g_share = config.guide_share if guide is not None else 0.0
        c_share = 1.0 - u_share - g_share
        counts = rng.multinomial(n, [c_share, g_share, u_share])
        parts = [msg.sample(counts[0], rng)]
        if counts[1]:
            parts.append(guide.sample(counts[1], rng))
        parts.append(region.sample(counts[2], rng))
        x = np.concatenate(parts, axis=0).reshape(n, msg.dim)
        log_t, log_c = msg.evaluate(x)
        mix = [(c_share, log_c), (u_share, region.log_density(x))]
        if g_share > 0:
            mix.append((g_share, guide.log_density(x)))
        try:
            w = normalize_log(log_t - _logaddexp_weighted(mix))
        except DegenerateWeightsError:
            if attempt == config.max_retries:
                if config.on_degenerate == "raise":
                    raise
                return ParticleSet.uniform(region.sample(n, rng), msg.circular), "fallback"
            outcome = "recovered"
            if guide is not None:
                guide = _widen(guide)
            continue
        ps = ParticleSet(x, w, msg.circular)
        return (resample(ps, rng) if resample_output else ps), outcome


def filter_message(factor, target: str, incoming: Mapping[str, ParticleSet], proposal,
                   config: EngineConfig, seed, guide: Kde | None = None,
                   resample_output: bool = True) -> ParticleSet:
    """Particle representation of a factor-to-variable message.

    The unnormalised weight of a proposal sample is the incoming-weighted sum
    of the factor over ``incoming_subsample`` incoming tuples, divided by the
    proposal density.

    Parameters
    ----------
    factor : DistanceFactor, AodFactor or AoaFactor
    target : str
        Role of the receiving variable: ``"P"``, ``"S"`` or ``"ALPHA"``.
    incoming : mapping
        Role -> message from every other neighbour of the factor except the
        base station, whose Dirac message is folded into the factor.
    proposal : DiskRegion or IntervalRegion
        Uniform area of interest, the defensive mixture component.
    guide : Kde, optional
        Where the target variable is already believed to be.
    """
    rng = np.random.default_rng(seed)
    msg = FactorMessage.from_incoming(factor, target, incoming, config.subsample, rng)
    ps, _ = _importance(msg, proposal, config, rng, guide, resample_output)
    return ps


# --- message multiplication -----------------------------------------------

def _product_draw(terms: Sequence, prev: Kde | None, region, config, rng, dim):
    """Shared proposal draw; returns samples, per-term evaluations and log proposal."""
    n = config.n_particles
    comps: list[tuple[float, object]] = []
    free = 1.0 - config.uniform_share
    if prev is not None:
        comps.append((free * config.belief_share, prev))
        free *= 1.0 - config.belief_share
    for t in terms:
        comps.append((free / len(terms), t))
    counts = rng.multinomial(n, [c[0] for c in comps] + [config.uniform_share])
    parts = [c.sample(k, rng) for (_, c), k in zip(comps, counts) if k > 0]
    parts.append(region.sample(counts[-1], rng))
    x = np.concatenate(parts, axis=0).reshape(n, dim)
    evals = [_evaluate(t, x) for t in terms]
    prev_ld = prev.log_density(x) if prev is not None else None
    mix = [(config.uniform_share, region.log_density(x))]
    k = 0
    if prev is not None:
        mix.append((comps[0][0], prev_ld))
        k = 1
    for (share, _), ev in zip(comps[k:], evals):
        mix.append((share, ev[1]))
    return x, evals, prev_ld, _logaddexp_weighted(mix)


def _product(terms, prev, region, config, rng, circular, dim):
    """Importance-sampled product with bandwidth-doubling recovery."""
    outcome = "ok"
    for attempt in range(config.max_retries + 1):
        x, evals, prev_ld, log_q = _product_draw(terms, prev, region, config, rng, dim)
        log_w = sum(ev[0] for ev in evals) - log_q
        if prev_ld is not None:
            log_w = log_w + prev_ld
        try:
            w = normalize_log(log_w)
        except DegenerateWeightsError:
            if attempt == config.max_retries:
                if config.on_degenerate == "raise":
                    raise
                return (ParticleSet.uniform(region.sample(config.n_particles, rng), circular),
                        "fallback")
            outcome = "recovered"
            terms = [_widen(t) for t in terms]
            prev = _widen(prev) if prev is not None else None
            continue
        return resample(ParticleSet(x, w, circular), rng), outcome


def multiply_messages(variable: str, target: str, prev_belief: Kde | None,
                      incoming: Sequence, proposal, config: EngineConfig,
                      seed) -> ParticleSet:
    """Variable-to-factor message: previous belief times all other incoming messages.

    ``incoming`` must already exclude the message arriving from ``target``.
    Items may be :class:`Kde` or :class:`FactorMessage` objects.
    """
    ps, _ = _product(list(incoming), prev_belief, proposal, config,
                     np.random.default_rng(seed), variable == fg.ALPHA, proposal.dim)
    return ps


def update_belief(variable: str, prev_belief: Kde | None, all_incoming: Sequence,
                  proposal, config: EngineConfig, seed) -> ParticleSet:
    """Belief: previous belief times every incoming message."""
    ps, _ = _product(list(all_incoming), prev_belief, proposal, config,
                     np.random.default_rng(seed), variable == fg.ALPHA, proposal.dim)
    return ps


def node_products(terms: dict[str, object], prev: Kde | None, outputs: dict[str, list[str]],
                  region, config, rng, circular: bool):
    """All products at one variable node from a single proposal draw.

    ``outputs`` maps an output key to the incoming keys it multiplies.
    Returns ``{key: (ParticleSet, outcome)}``.
    """
    keys = list(terms)
    x, evals, prev_ld, log_q = _product_draw([terms[k] for k in keys], prev, region, config,
                                             rng, region.dim)
    logs = {k: ev[0] for k, ev in zip(keys, evals)}
    base = -log_q if prev_ld is None else prev_ld - log_q
    result = {}
    for out, members in outputs.items():
        try:
            w = normalize_log(base + sum(logs[k] for k in members))
        except DegenerateWeightsError:
            ps, outcome = _product([terms[k] for k in members], prev, region, config, rng,
                                   circular, region.dim)
            result[out] = (ps, "recovered" if outcome == "ok" else outcome)
            continue
        result[out] = (resample(ParticleSet(x, w, circular), rng), "ok")
    return result


# --- the estimator --------------------------------------------------------

class Engine:
    """One estimation run over one observation vector."""

    def __init__(self, obs: Observations, q_star, config: EngineConfig | None = None,
                 on_message: Callable[[tuple[str, str], int, ParticleSet], None] | None = None):
        self.obs = obs
        self.q = np.asarray(q_star, dtype=float).reshape(2)
        self.graph = fg.build_graph(obs.n_paths)
        self.config = (config or EngineConfig()).resolved(obs)
        self.on_message = on_message
        self.flags = EngineFlags()
        self.messages: dict[tuple[str, str], object] = {}
        self.beliefs: dict[str, ParticleSet] = {}

        d, tx, rx = obs.d, obs.theta_tx, obs.theta_rx
        sd, stx, srx = obs.noise.sigma_d, obs.noise.sigma_tx, obs.noise.sigma_rx
        self.factors = {}
        self.regions = {}
        for j in range(obs.n_paths):
            self.factors[fg.D(j)] = DistanceFactor(d[j], sd[j], self.q)
            self.factors[fg.AOD(j)] = AodFactor(tx[j], stx[j], self.q, d[j])
            self.factors[fg.AOA(j)] = AoaFactor(rx[j], srx[j], d[j] + 3.0 * sd[j])
            self.regions[fg.S(j)] = DiskRegion(tuple(self.q), float(d[j]))
        self.regions[fg.P] = DiskRegion(tuple(self.q), float(d.max()))
        self.regions[fg.ALPHA] = IntervalRegion(-math.pi, math.pi)

    def _bandwidth(self, var: str) -> float:
        if var == fg.ALPHA:
            return self.config.bandwidth_orientation
        return self.config.bandwidth_position

    def _edge_rng(self, iteration: int, edge: tuple[str, str]) -> np.random.Generator:
        return _rng(self.config.seed, iteration, self.graph.edge_index(edge))

    def _record(self, label: str, iteration: int, outcome: str):
        if outcome != "ok":
            self.flags.events.append((iteration, label, outcome))
            log.debug("degenerate weights on %s at iteration %d: %s", label, iteration, outcome)

    def _dump(self, edge, iteration, ps):
        if self.on_message is not None:
            self.on_message(edge, iteration, ps)

    def filter_edge(self, factor: str, target: str, iteration: int):
        """Form the factor-to-variable message from the current incoming messages."""
        rng = self._edge_rng(iteration, (factor, target))
        incoming = {_role(v): self.messages[(v, factor)]
                    for v in self.graph.neighbors[factor] if v not in (target, fg.Q)}
        msg = FactorMessage.from_incoming(self.factors[factor], _role(target), incoming,
                                          self.config.subsample, rng)
        self.messages[(factor, target)] = msg
        if self.on_message is not None:
            self._materialize(factor, target, iteration, rng)

    def _materialize(self, factor: str, target: str, iteration: int, rng):
        """Particle form of a factor message; only needed for the dump callback."""
        guide = None
        if target in self.beliefs:
            guide = Kde(self.beliefs[target].subsample(self.config.subsample, rng),
                        self._bandwidth(target))
        ps, outcome = _importance(self.messages[(factor, target)], self.regions[target],
                                  self.config, rng, guide)
        self._record(f"{factor}->{target}", iteration, outcome)
        self._dump((factor, target), iteration, ps)

    def multiply_node(self, var: str, iteration: int, outputs: dict[str, list[str]],
                      with_belief: bool):
        """Products at ``var``; an output key is a factor name, or ``var`` for the belief."""
        rng = _rng(self.config.seed, iteration, self.graph.edge_index((var, var)))
        needed = sorted({f for members in outputs.values() for f in members})
        h = self._bandwidth(var)
        terms = {}
        for f in needed:
            m = self.messages[(f, var)]
            terms[f] = m.smoothed(h) if isinstance(m, FactorMessage) else \
                Kde(m.subsample(self.config.subsample, rng), h)
        prev = None
        if with_belief and var in self.beliefs:
            prev = Kde(self.beliefs[var].subsample(self.config.subsample, rng), h)
        res = node_products(terms, prev, outputs, self.regions[var], self.config, rng,
                            var == fg.ALPHA)
        for out, (ps, outcome) in res.items():
            if out == var:
                self._record(f"belief {var}", iteration, outcome)
                self.beliefs[var] = ps
            else:
                self._record(f"{var}->{out}", iteration, outcome)
                self.messages[(var, out)] = ps
                self._dump((var, out), iteration, ps)

    def estimate(self) -> StateVector:
        p = mmse_estimate(self.beliefs[fg.P])
        a = float(mmse_estimate(self.beliefs[fg.ALPHA])[0])
        s = tuple(Point2(*mmse_estimate(self.beliefs[fg.S(j)]))
                  for j in range(self.graph.n_paths))
        return StateVector(Pose(Point2(*p), a), s)

    def initialize(self) -> StateVector:
        """Start-up pass from the base station outwards, then the first beliefs."""
        J = range(self.graph.n_paths)
        P, A, S, D, AOD, AOA = fg.P, fg.ALPHA, fg.S, fg.D, fg.AOD, fg.AOA
        for j in J:                                                       # 1
            self.filter_edge(AOD(j), S(j), 0)
        for j in J:                                                       # 2
            self.multiply_node(S(j), 0, {D(j): [AOD(j)]}, with_belief=False)
        for j in J:                                                       # 3
            self.filter_edge(D(j), P, 0)
        outs = {D(j): [D(k) for k in J if k != j] for j in J}             # 4
        outs.update({AOA(j): [D(k) for k in J] for j in J})
        self.multiply_node(P, 0, outs, with_belief=False)
        for j in J:                                                       # 5
            self.filter_edge(D(j), S(j), 0)
        for j in J:                                                       # 6
            self.multiply_node(S(j), 0, {AOA(j): [AOD(j), D(j)]}, with_belief=False)
        for j in J:                                                       # 7
            self.filter_edge(AOA(j), A, 0)
        self.multiply_node(A, 0, {AOA(j): [AOA(k) for k in J if k != j] for j in J},
                           with_belief=False)                             # 8
        for j in J:                                                       # 9
            self.filter_edge(AOA(j), P, 0)
            self.filter_edge(AOA(j), S(j), 0)
        self.multiply_node(P, 0, {P: [D(j) for j in J] + [AOA(j) for j in J]},
                           with_belief=False)
        for j in J:
            self.multiply_node(S(j), 0, {S(j): [AOD(j), D(j), AOA(j)]}, with_belief=False)
        self.multiply_node(A, 0, {A: [AOA(j) for j in J]}, with_belief=False)
        return self.estimate()

    def flood(self, iteration: int) -> StateVector:
        """One flooding round; factors read the previous round's variable messages."""
        f2v, var_nodes = fg.flooding_schedule(self.graph)
        for factor, var in f2v:
            self.filter_edge(factor, var, iteration)
        if self.on_message is not None:
            # AOD messages are fixed after start-up; dump them every round anyway
            for j in range(self.graph.n_paths):
                edge = (fg.AOD(j), fg.S(j))
                self._materialize(*edge, iteration, self._edge_rng(iteration, edge))
        for var in var_nodes:
            factors = list(self.graph.variable_neighbors(var))
            outs = {f: [g for g in factors if g != f]
                    for f in factors if not f.startswith("AOD")}
            outs[var] = factors
            self.multiply_node(var, iteration, outs, with_belief=self.config.belief_feedback)
        return self.estimate()

    def run(self) -> EngineResult:
        initial = self.initialize()
        trace = [self.flood(it) for it in range(1, self.config.n_iterations + 1)]
        return EngineResult(trace, initial, dict(self.beliefs), dict(self.messages),
                            self.flags, self.config)


def run(obs: Observations, q_star, config: EngineConfig | None = None,
        on_message=None) -> EngineResult:
    """Start-up pass followed by ``n_iterations`` flooding rounds."""
    return Engine(obs, q_star, config, on_message).run()


def message_dumper(directory, iterations: Sequence[int] | None = (1, 5)):
    """Callback writing ``msg_<from>_<to>_iter<l>.csv`` for the chosen iterations."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    wanted = None if iterations is None else set(iterations)

    def dump(edge, iteration, ps):
        if wanted is None or iteration in wanted:
            ps.to_csv(directory / f"msg_{edge[0]}_{edge[1]}_iter{iteration}.csv")

    return dump

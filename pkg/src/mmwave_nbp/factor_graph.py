"""Factor graph of the joint position / orientation / incidence-point posterior.

Variable nodes: ``P`` (mobile position), ``ALPHA`` (mobile orientation),
``S<j>`` (point of incidence of path j) and ``Q`` (base station, known).
Factor nodes per path: ``D<j>`` (distance), ``AOD<j>`` and ``AOA<j>``.

``Q`` only ever emits a Dirac message; nothing is sent back to it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .geometry import MIN_PATHS
from .errors import InsufficientPathsError

P = "P"
ALPHA = "ALPHA"
Q = "Q"


def S(j: int) -> str:
    return f"S{j}"


def D(j: int) -> str:
    return f"D{j}"


def AOD(j: int) -> str:
    return f"AOD{j}"


def AOA(j: int) -> str:
    return f"AOA{j}"


Edge = tuple[str, str]


@dataclass(frozen=True)
class FactorGraph:
    n_paths: int
    variables: tuple[str, ...]
    factors: tuple[str, ...]
    # factor -> connected variables, in a fixed order
    neighbors: dict[str, tuple[str, ...]] = field(hash=False)

    def variable_neighbors(self, var: str) -> tuple[str, ...]:
        return tuple(f for f in self.factors if var in self.neighbors[f])

    def edges(self) -> list[tuple[str, str]]:
        return [(f, v) for f in self.factors for v in self.neighbors[f]]

    def directed_edges(self) -> list[Edge]:
        """Every edge that can carry a message; nothing flows into ``Q``."""
        out: list[Edge] = []
        for f in self.factors:
            for v in self.neighbors[f]:
                out.append((v, f))
                if v != Q:
                    out.append((f, v))
        return out

    def edge_index(self, edge: Edge) -> int:
        return self._edge_ids[edge]

    @property
    def _edge_ids(self) -> dict[Edge, int]:
        ids = self.__dict__.get("_edge_ids_cache")
        if ids is None:
            ids = {e: i for i, e in enumerate(self.directed_edges())}
            # beliefs get pseudo-edges after the real ones
            for k, v in enumerate(self.variables):
                ids[(v, v)] = len(ids) + k
            object.__setattr__(self, "_edge_ids_cache", ids)
        return ids

    def degree(self, node: str) -> int:
        if node in self.neighbors:
            return len(self.neighbors[node])
        return len(self.variable_neighbors(node))


def build_graph(n_paths: int) -> FactorGraph:
    if n_paths < MIN_PATHS:
        raise InsufficientPathsError(f"need at least {MIN_PATHS} NLOS paths, got {n_paths}")
    variables = (P, ALPHA, *(S(j) for j in range(n_paths)), Q)
    neighbors: dict[str, tuple[str, ...]] = {}
    for j in range(n_paths):
        neighbors[D(j)] = (P, Q, S(j))
        neighbors[AOD(j)] = (Q, S(j))
        neighbors[AOA(j)] = (P, ALPHA, S(j))
    factors = tuple(neighbors)
    return FactorGraph(n_paths, variables, factors, neighbors)


def initialization_schedule(graph: FactorGraph) -> list[list[Edge]]:
    """The nine message groups of the start-up pass, in execution order."""
    js = range(graph.n_paths)
    return [
        [(AOD(j), S(j)) for j in js],
        [(S(j), D(j)) for j in js],
        [(D(j), P) for j in js],
        [(P, D(j)) for j in js] + [(P, AOA(j)) for j in js],
        [(D(j), S(j)) for j in js],
        [(S(j), AOA(j)) for j in js],
        [(AOA(j), ALPHA) for j in js],
        [(ALPHA, AOA(j)) for j in js],
        [(AOA(j), P) for j in js] + [(AOA(j), S(j)) for j in js],
    ]


def flooding_schedule(graph: FactorGraph) -> tuple[list[Edge], list[str]]:
    """One flooding round: every factor-to-variable edge, then every variable node.

    ``AOD -> S`` edges are excluded because they depend on ``Q`` only and are
    therefore fixed after start-up.
    """
    f2v = [(f, v) for f in graph.factors for v in graph.neighbors[f]
           if v != Q and not f.startswith("AOD")]
    var_nodes = [v for v in graph.variables if v != Q]
    return f2v, var_nodes

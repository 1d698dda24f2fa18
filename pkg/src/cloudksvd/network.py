"""Simulated synchronous network: topologies, mixing weights, consensus.

All nodes live in one process. A consensus round is one synchronous
exchange: every reachable node replaces its state with a weighted average
of its reachable neighbors' states (self included). Nodes listed in the
failure schedule for a round neither send nor update during that round,
and the remaining weights are renormalized over the reachable set.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class Topology:
    """Undirected graph over nodes 0..node_count-1 plus a failure schedule.

    ``edges`` holds (i, j) pairs with i < j. ``failure_schedule`` maps an
    absolute consensus-round index to the set of nodes unreachable during
    that round.
    """

    node_count: int
    edges: frozenset
    failure_schedule: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.node_count < 1:
            raise ValueError(f"node_count must be >= 1, got {self.node_count}")
        canon = set()
        for e in self.edges:
            i, j = e
            if i == j:
                raise ValueError(f"self-loop on node {i}")
            if not (0 <= i < self.node_count and 0 <= j < self.node_count):
                raise ValueError(f"edge {e} references a node outside 0..{self.node_count - 1}")
            canon.add((min(i, j), max(i, j)))
        object.__setattr__(self, "edges", frozenset(canon))
        sched = {}
        for rnd, nodes in self.failure_schedule.items():
            if rnd < 0:
                raise ValueError(f"round index must be >= 0, got {rnd}")
            nodes = frozenset(int(v) for v in nodes)
            for v in nodes:
                if not (0 <= v < self.node_count):
                    raise ValueError(f"failure schedule names unknown node {v}")
            sched[int(rnd)] = nodes
        object.__setattr__(self, "failure_schedule", sched)
        if not self.failure_schedule and not self._connected():
            raise ValueError("topology must be connected")

    def _connected(self) -> bool:
        if self.node_count == 1:
            return True
        adj = self.adjacency()
        seen = {0}
        stack = [0]
        while stack:
            u = stack.pop()
            for v in np.nonzero(adj[u])[0]:
                if v not in seen:
                    seen.add(int(v))
                    stack.append(int(v))
        return len(seen) == self.node_count

    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.node_count, self.node_count), dtype=bool)
        for i, j in self.edges:
            a[i, j] = a[j, i] = True
        return a

    def degrees(self) -> np.ndarray:
        return self.adjacency().sum(axis=1)


@dataclass(frozen=True)
class WeightMatrix:
    """Symmetric doubly stochastic nonnegative mixing matrix."""

    data: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.data, dtype=np.float64)
        if w.ndim != 2 or w.shape[0] != w.shape[1] or w.shape[0] < 1:
            raise ValueError(f"weight matrix must be square, got {w.shape}")
        if np.any(w < 0):
            raise ValueError("weights must be nonnegative")
        ones = np.ones(w.shape[0])
        if np.max(np.abs(w.sum(axis=1) - ones)) > 1e-12 or \
           np.max(np.abs(w.sum(axis=0) - ones)) > 1e-12:
            raise ValueError("weight matrix must be doubly stochastic (rows and columns sum to 1)")
        object.__setattr__(self, "data", w)

    @property
    def node_count(self) -> int:
        return self.data.shape[0]


@dataclass(frozen=True)
class NodeState:
    """One node's consensus payload: a finite vector."""

    node_id: int
    vector: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vector, dtype=np.float64)
        if v.ndim != 1 or v.size < 1:
            raise ValueError(f"vector must be 1-D and non-empty, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("vector must be finite")
        if self.node_id < 0:
            raise ValueError(f"node_id must be >= 0, got {self.node_id}")
        object.__setattr__(self, "vector", v)


def build_topology(kind: str, node_count: int, failure_schedule=None) -> Topology:
    """Construct a named topology: 'complete', 'ring', or 'path'.

    A 2-node ring degenerates to a single edge; a 3-node ring is the
    complete triangle.
    """
    if node_count < 1:
        raise ValueError(f"node_count must be >= 1, got {node_count}")
    if kind == "complete":
        edges = {(i, j) for i in range(node_count) for j in range(i + 1, node_count)}
    elif kind == "ring":
        edges = {(min(i, (i + 1) % node_count), max(i, (i + 1) % node_count))
                 for i in range(node_count)} if node_count > 1 else set()
    elif kind == "path":
        edges = {(i, i + 1) for i in range(node_count - 1)}
    else:
        raise ValueError(f"unknown topology kind {kind!r}")
    return Topology(node_count, frozenset(edges), failure_schedule or {})


def build_weights(topology: Topology, scheme: str = "uniform-neighbor",
                  epsilon: float | None = None) -> WeightMatrix:
    """Build a doubly stochastic weight matrix for a topology.

    'laplacian' uses W = I - epsilon * L and requires 0 < epsilon <
    1/max_degree. 'uniform-neighbor' gives the flat matrix 1/H when the
    graph is complete and Metropolis-Hastings weights otherwise
    (W_ij = 1 / (1 + max(deg_i, deg_j)) on edges, diagonal absorbs the rest).
    """
    h = topology.node_count
    adj = topology.adjacency()
    deg = topology.degrees()
    if scheme == "laplacian":
        if epsilon is None:
            raise ValueError("laplacian scheme requires epsilon")
        max_deg = int(deg.max(initial=0))
        if max_deg == 0:
            return WeightMatrix(np.eye(h))
        if not (0.0 < epsilon < 1.0 / max_deg):
            raise ValueError(
                f"epsilon must satisfy 0 < epsilon < 1/max_degree = {1.0 / max_deg!r}, "
                f"got {epsilon!r}"
            )
        lap = np.diag(deg.astype(np.float64)) - adj.astype(np.float64)
        return WeightMatrix(np.eye(h) - epsilon * lap)
    if scheme == "uniform-neighbor":
        if len(topology.edges) == h * (h - 1) // 2:
            return WeightMatrix(np.full((h, h), 1.0 / h))
        w = np.zeros((h, h))
        for i, j in topology.edges:
            w[i, j] = w[j, i] = 1.0 / (1.0 + max(deg[i], deg[j]))
        np.fill_diagonal(w, 1.0 - w.sum(axis=1))
        return WeightMatrix(w)
    raise ValueError(f"unknown weight scheme {scheme!r}")


def _mix_once(states: np.ndarray, weights: np.ndarray, unreachable: frozenset) -> np.ndarray:
    """One synchronous averaging round over the rows of ``states``."""
    if not unreachable:
        return weights @ states
    h = states.shape[0]
    keep = np.array([i not in unreachable for i in range(h)])
    trimmed = weights.copy()
    trimmed[:, ~keep] = 0.0
    row_sums = trimmed.sum(axis=1, keepdims=True)
    # reachable rows keep positive mass (self-weight is always > 0)
    mixed = np.where(keep[:, None], (trimmed / np.where(row_sums > 0, row_sums, 1.0)) @ states,
                     states)
    return mixed


def consensus_round(states, weights: WeightMatrix, unreachable=frozenset()) -> list[NodeState]:
    """Run one averaging round and return the new node states.

    Unreachable nodes keep their state verbatim; reachable nodes average
    over reachable neighbors with weights renormalized to sum to one.
    """
    states = list(states)
    h = weights.node_count
    if len(states) != h:
        raise ValueError(f"expected {h} states, got {len(states)}")
    ids = [s.node_id for s in states]
    if ids != list(range(h)):
        raise ValueError(f"states must be ordered by node_id 0..{h - 1}, got {ids}")
    dim = states[0].vector.size
    for s in states:
        if s.vector.size != dim:
            raise ValueError("all state vectors must have the same length")
    unreachable = frozenset(int(v) for v in unreachable)
    for v in unreachable:
        if not (0 <= v < h):
            raise ValueError(f"unreachable set names unknown node {v}")
    stacked = np.stack([s.vector for s in states])
    mixed = _mix_once(stacked, weights.data, unreachable)
    return [NodeState(i, mixed[i]) for i in range(h)]


def run_consensus(states, weights: WeightMatrix, rounds: int,
                  failure_schedule=None, start_round: int = 0) -> list[NodeState]:
    """Run ``rounds`` consecutive averaging rounds.

    The failure schedule is keyed by absolute round index; the first round
    executed here has index ``start_round``. rounds = 0 returns the input
    states unchanged.
    """
    if rounds < 0:
        raise ValueError(f"rounds must be >= 0, got {rounds}")
    schedule = failure_schedule or {}
    out = list(states)
    for r in range(rounds):
        out = consensus_round(out, weights, schedule.get(start_round + r, frozenset()))
    return out

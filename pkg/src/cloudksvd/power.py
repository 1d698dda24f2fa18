"""Distributed estimation of the dominant eigenvector of a sum of Grams.

Each node i holds a PSD matrix M_i and all nodes want the top eigenvector
of sum_i M_i without shipping the matrices anywhere. One power round is:
apply the local matrix to the current estimate, average the resulting
vectors over the network for a fixed number of consensus rounds, then
normalize locally. With enough consensus rounds every node tracks the
centralized power iteration up to the global 1/H scale, which the
normalization removes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .network import WeightMatrix, _mix_once


class DegenerateSpectrumError(Exception):
    """Power iteration collapsed: an iterate had (numerically) zero norm."""


@dataclass(frozen=True)
class ResidualGram:
    """One node's local M x M Gram matrix E E^T (symmetric PSD)."""

    node_id: int
    data: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.data, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] < 1:
            raise ValueError(f"gram must be square, got shape {m.shape}")
        if not np.all(np.isfinite(m)):
            raise ValueError("gram entries must be finite")
        if np.max(np.abs(m - m.T), initial=0.0) > 1e-9:
            raise ValueError("gram must be symmetric within 1e-9")
        if not _is_psd(m):
            raise ValueError("gram must be positive semidefinite within 1e-9")
        if self.node_id < 0:
            raise ValueError(f"node_id must be >= 0, got {self.node_id}")
        object.__setattr__(self, "data", m)

    @property
    def dim(self) -> int:
        return self.data.shape[0]


def _is_psd(m: np.ndarray, tol: float = 1e-9) -> bool:
    # Cholesky of the shifted matrix is cheap and succeeds for any true
    # Gram; fall back to the exact eigenvalue check near the tolerance edge.
    shift = tol * max(1.0, float(np.abs(m).max(initial=0.0)))
    try:
        np.linalg.cholesky(m + shift * np.eye(m.shape[0]))
        return True
    except np.linalg.LinAlgError:
        return bool(np.linalg.eigvalsh(m).min() >= -tol)


@dataclass(frozen=True)
class EigEstimate:
    """One node's unit-norm estimate of the dominant eigenvector."""

    node_id: int
    vector: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vector, dtype=np.float64)
        if v.ndim != 1 or v.size < 1:
            raise ValueError(f"vector must be 1-D and non-empty, got shape {v.shape}")
        if abs(np.linalg.norm(v) - 1.0) > 1e-9:
            raise ValueError(f"estimate must have unit norm, got {np.linalg.norm(v)!r}")
        if self.node_id < 0:
            raise ValueError(f"node_id must be >= 0, got {self.node_id}")
        object.__setattr__(self, "vector", v)


class OracleEig(NamedTuple):
    vector: np.ndarray
    degenerate: bool


def power_step_rounds(grams: list[np.ndarray], q: np.ndarray, power_rounds: int,
                      consensus_rounds: int, weights: np.ndarray,
                      failure_schedule=None, start_round: int = 0) -> np.ndarray:
    """Core iteration on raw arrays. Returns an H x M matrix of estimates.

    ``q`` is the shared H x M starting block (one row per node). If every
    node's iterate collapses to (numerically) zero norm in the same round
    the Gram sum is degenerate along the current direction and
    DegenerateSpectrumError is raised. A zero iterate at only some nodes
    is a transient of sparse mixing (e.g. one informative node, one
    consensus round, a non-neighbor): those nodes keep their previous
    direction for that round and catch up once averaging reaches them.
    """
    schedule = failure_schedule or {}
    tiny = np.finfo(np.float64).tiny
    estimates = q.copy()
    rnd = start_round
    for _ in range(power_rounds):
        z = np.stack([g @ estimates[i] for i, g in enumerate(grams)])
        for r in range(consensus_rounds):
            z = _mix_once(z, weights, schedule.get(rnd + r, frozenset()))
        rnd += consensus_rounds
        norms = np.linalg.norm(z, axis=1)
        dead = norms < tiny
        if dead.all():
            raise DegenerateSpectrumError(
                f"all {len(grams)} iterates collapsed to zero norm"
            )
        fresh = z / np.where(dead, 1.0, norms)[:, None]
        estimates = np.where(dead[:, None], estimates, fresh)
    return estimates


def distributed_dominant_eigvec(grams, q_init: np.ndarray, power_rounds: int,
                                consensus_rounds: int, weights: WeightMatrix,
                                failure_schedule=None,
                                start_round: int = 0) -> list[EigEstimate]:
    """Run the consensus-embedded power method.

    ``grams`` is one ResidualGram per node, ordered by node_id; ``q_init``
    is the common unit-direction seed (any nonzero vector; it is normalized
    here). The failure schedule, if given, is keyed by absolute consensus
    round index, consumed starting at ``start_round``. With one node and
    consensus_rounds = 0 this reduces to the classical power method.
    """
    grams = list(grams)
    h = weights.node_count
    if len(grams) != h:
        raise ValueError(f"expected {h} grams, got {len(grams)}")
    ids = [g.node_id for g in grams]
    if ids != list(range(h)):
        raise ValueError(f"grams must be ordered by node_id 0..{h - 1}, got {ids}")
    dim = grams[0].dim
    for g in grams:
        if g.dim != dim:
            raise ValueError("all grams must share one dimension")
    q = np.asarray(q_init, dtype=np.float64)
    if q.shape != (dim,):
        raise ValueError(f"q_init shape {q.shape} does not match gram dimension {dim}")
    qn = np.linalg.norm(q)
    if qn == 0.0 or not np.all(np.isfinite(q)):
        raise ValueError("q_init must be a finite nonzero vector")
    if power_rounds < 1:
        raise ValueError(f"power_rounds must be >= 1, got {power_rounds}")
    if consensus_rounds < 0:
        raise ValueError(f"consensus_rounds must be >= 0, got {consensus_rounds}")
    schedule = failure_schedule or {}
    block = np.tile(q / qn, (h, 1))
    estimates = power_step_rounds([g.data for g in grams], block, power_rounds,
                                  consensus_rounds, weights.data, schedule, start_round)
    return [EigEstimate(i, estimates[i]) for i in range(h)]


def reference_eigvec_oracle(total: np.ndarray) -> OracleEig:
    """Exact dominant eigenvector of one symmetric matrix, for comparison.

    The sign is fixed by making the largest-magnitude entry positive.
    ``degenerate`` is set when the top two eigenvalues are within 1e-9
    (relative to the larger), where the dominant direction is not unique.
    """
    m = np.asarray(total, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] < 1:
        raise ValueError(f"matrix must be square, got shape {m.shape}")
    if np.max(np.abs(m - m.T), initial=0.0) > 1e-9:
        raise ValueError("matrix must be symmetric within 1e-9")
    vals, vecs = np.linalg.eigh(m)
    v = vecs[:, -1]
    pivot = int(np.argmax(np.abs(v)))
    if v[pivot] < 0:
        v = -v
    if m.shape[0] == 1:
        return OracleEig(v, False)
    gap = float(vals[-1] - vals[-2])
    degenerate = gap <= 1e-9 * max(1.0, abs(float(vals[-1])))
    return OracleEig(v, degenerate)

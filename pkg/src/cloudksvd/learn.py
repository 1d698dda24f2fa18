"""Distributed dictionary learning over a simulated node network.

Each iteration alternates two stages. Every node first sparse-codes its
own signal block against its current dictionary. Then the atoms are
updated one at a time, in place and in ascending order: for atom n each
node forms the reconstruction error restricted to the columns where it
uses that atom, and the new atom is the dominant eigenvector of the sum
of the per-node error Grams, found by the consensus-embedded power
method. A shared reference direction fixes the eigenvector sign so all
nodes land on the same orientation. The local variant skips consensus
entirely, so each node runs classical K-SVD on its own block (the rank-1
SVD replaced by local power iterations).

All randomness derives from one 64-bit seed through named SeedSequence
sub-streams: spawn key (0,) feeds the initial dictionary and the
reference direction, spawn key (1, t, n) feeds the power-method start
vector for atom n of iteration t (t counted from 1). Skipped updates
therefore do not shift later draws.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np

from .imaging import PatchMatrix
from .metrics import dict_divergence
from .network import Topology, WeightMatrix, build_topology, build_weights
from .power import ResidualGram, distributed_dominant_eigvec
from .sparse import Dictionary, SparseCodeMatrix, somp_batch

_SUPPORT_TOL = 1e-12
_STREAM_INIT = 0
_STREAM_QINIT = 1


@dataclass(frozen=True)
class LearnConfig:
    """Iteration counts, sparsity and seeding for one learning run.

    t_d: dictionary-update iterations; t_p: power rounds per atom update;
    t_c: consensus rounds per power round (ignored by the local variant);
    sparsity: max nonzeros per code column; n_atoms: dictionary size.
    """

    t_d: int
    t_p: int
    t_c: int
    sparsity: int
    n_atoms: int
    seed: int = 0
    variant: str = "cloud"

    def __post_init__(self):
        if self.t_d < 1:
            raise ValueError(f"t_d must be >= 1, got {self.t_d}")
        if self.t_p < 1:
            raise ValueError(f"t_p must be >= 1, got {self.t_p}")
        if self.t_c < 0:
            raise ValueError(f"t_c must be >= 0, got {self.t_c}")
        if self.sparsity < 1:
            raise ValueError(f"sparsity must be >= 1, got {self.sparsity}")
        if self.n_atoms < 1:
            raise ValueError(f"n_atoms must be >= 1, got {self.n_atoms}")
        if self.variant not in ("cloud", "local"):
            raise ValueError(f"variant must be 'cloud' or 'local', got {self.variant!r}")
        if not (0 <= self.seed < 2 ** 64):
            raise ValueError(f"seed must fit in 64 bits, got {self.seed}")


@dataclass(frozen=True)
class SupportMask:
    """Sorted column indices where one atom carries a nonzero coefficient."""

    indices: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64).ravel()
        if idx.size and (np.any(np.diff(idx) <= 0) or idx[0] < 0):
            raise ValueError("indices must be strictly increasing and nonnegative")
        object.__setattr__(self, "indices", idx)

    @property
    def size(self) -> int:
        return self.indices.size


@dataclass(frozen=True)
class ReferenceDirection:
    """The shared nonzero vector that orients every updated atom."""

    vector: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vector, dtype=np.float64)
        if v.ndim != 1 or v.size < 1:
            raise ValueError(f"vector must be 1-D and non-empty, got shape {v.shape}")
        if not np.all(np.isfinite(v)) or np.linalg.norm(v) == 0.0:
            raise ValueError("vector must be finite and nonzero")
        object.__setattr__(self, "vector", v)


class AtomUpdate(NamedTuple):
    atom: np.ndarray
    row_values: np.ndarray


@dataclass(frozen=True)
class IterationStats:
    iteration: int
    dict_divergence: float
    node_mse: tuple


@dataclass(frozen=True)
class LearnResult:
    dictionaries: list
    codes: list
    trace: list


def init_shared(dim_m: int, n_atoms: int, seed: int) -> tuple[Dictionary, ReferenceDirection]:
    """Draw the initial dictionary and reference direction for a seed.

    Entries are i.i.d. uniform [0, 1) with columns normalized to unit
    norm; the reference direction is standard normal. Every node starts
    from this same dictionary.
    """
    if dim_m < 1 or n_atoms < 1:
        raise ValueError(f"dim_m and n_atoms must be >= 1, got {dim_m}, {n_atoms}")
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(_STREAM_INIT,)))
    data = rng.uniform(0.0, 1.0, size=(dim_m, n_atoms))
    data /= np.linalg.norm(data, axis=0)
    d_ref = rng.standard_normal(dim_m)
    return Dictionary(data), ReferenceDirection(d_ref)


def _draw_q_init(seed: int, iteration: int, atom: int, dim_m: int) -> np.ndarray:
    rng = np.random.default_rng(
        np.random.SeedSequence(entropy=seed, spawn_key=(_STREAM_QINIT, iteration, atom))
    )
    v = rng.standard_normal(dim_m)
    return v / np.linalg.norm(v)


def support_mask(codes, atom: int) -> SupportMask:
    """Columns where ``atom``'s row of the code matrix is nonzero.

    Nonzero means |value| > 1e-12, so coefficients that an LS refit drove
    to numerical zero drop out of the support.
    """
    x = np.asarray(getattr(codes, "data", codes), dtype=np.float64)
    if not (0 <= atom < x.shape[0]):
        raise IndexError(f"atom {atom} out of range for {x.shape[0]} rows")
    return SupportMask(np.nonzero(np.abs(x[atom]) > _SUPPORT_TOL)[0])


def restricted_error(signals, dictionary, codes, atom: int, mask: SupportMask) -> np.ndarray:
    """Reconstruction error without atom ``atom``, on its support columns.

    Computes (Y - D X + d_n x_n) restricted to the mask columns, which
    equals Y minus the contribution of every atom except n. Returns an
    M x mask.size matrix (0 columns for an empty mask).
    """
    y = np.asarray(getattr(signals, "data", signals), dtype=np.float64)
    d = np.asarray(getattr(dictionary, "data", dictionary), dtype=np.float64)
    x = np.asarray(getattr(codes, "data", codes), dtype=np.float64)
    if y.shape[0] != d.shape[0] or d.shape[1] != x.shape[0] or y.shape[1] != x.shape[1]:
        raise ValueError(
            f"inconsistent shapes: Y {y.shape}, D {d.shape}, X {x.shape}"
        )
    if not (0 <= atom < d.shape[1]):
        raise IndexError(f"atom {atom} out of range for {d.shape[1]} atoms")
    idx = mask.indices
    if idx.size and idx[-1] >= y.shape[1]:
        raise ValueError(f"mask index {idx[-1]} out of range for {y.shape[1]} columns")
    y_sub = y[:, idx]
    x_sub = x[:, idx]
    return y_sub - d @ x_sub + np.outer(d[:, atom], x[atom, idx])


def atom_update(errors: Sequence[np.ndarray], d_ref: ReferenceDirection,
                q_init: np.ndarray, t_p: int, t_c: int,
                weights: Optional[WeightMatrix] = None, failure_schedule=None,
                start_round: int = 0) -> list:
    """Compute one atom's replacement at every node.

    ``errors`` holds each node's restricted error matrix (possibly with 0
    columns). With t_c >= 1 the nodes jointly estimate the dominant
    eigenvector of sum_i E_i E_i^T and every node receives an update; a
    node with an empty support contributes a zero Gram and gets back the
    new atom with an empty coefficient row. With t_c = 0 (or no weights)
    nodes work in isolation and empty-support nodes are skipped (None).
    If every node is empty the atom stays as it is: all entries are None.

    Returns a list of AtomUpdate(atom, row_values) or None per node. The
    atom is oriented so its inner product with d_ref is nonnegative; the
    row values are the atom's projections onto the error columns.
    """
    mats = [np.asarray(e, dtype=np.float64) for e in errors]
    if not mats:
        raise ValueError("need at least one error matrix")
    dim = mats[0].shape[0]
    for e in mats:
        if e.ndim != 2 or e.shape[0] != dim:
            raise ValueError(f"error matrices must share the row count {dim}")
    ref = d_ref.vector if isinstance(d_ref, ReferenceDirection) else np.asarray(d_ref, float)
    if ref.shape != (dim,):
        raise ValueError(f"d_ref length {ref.shape} does not match M={dim}")
    if all(e.shape[1] == 0 for e in mats):
        return [None] * len(mats)

    def orient(vec: np.ndarray) -> np.ndarray:
        return vec if float(ref @ vec) >= 0.0 else -vec

    if t_c == 0 or weights is None:
        one = WeightMatrix(np.eye(1))
        out: list = []
        for e in mats:
            if e.shape[1] == 0:
                out.append(None)
                continue
            est = distributed_dominant_eigvec(
                [ResidualGram(0, e @ e.T)], q_init, t_p, 0, one
            )[0]
            atom = orient(est.vector)
            out.append(AtomUpdate(atom, atom @ e))
        return out

    grams = [ResidualGram(i, e @ e.T) for i, e in enumerate(mats)]
    estimates = distributed_dominant_eigvec(grams, q_init, t_p, t_c, weights,
                                            failure_schedule, start_round)
    results = []
    for est, e in zip(estimates, mats):
        atom = orient(est.vector)
        results.append(AtomUpdate(atom, atom @ e))
    return results


def _record(trace, on_iteration, iteration, mats, dicts, codes):
    h = len(mats)
    div = dict_divergence(dicts) if h > 1 else float("nan")
    node_mse = tuple(
        float(np.mean((mats[i] - dicts[i] @ codes[i]) ** 2)) for i in range(h)
    )
    trace.append(IterationStats(iteration, div, node_mse))
    if on_iteration is not None:
        on_iteration(iteration, dicts, codes)


def run_cloud_ksvd(parts: Sequence[PatchMatrix], cfg: LearnConfig,
                   topology: Optional[Topology] = None,
                   weights: Optional[WeightMatrix] = None,
                   on_iteration: Optional[Callable] = None) -> LearnResult:
    """Learn per-node dictionaries from per-node signal blocks.

    ``parts`` holds one PatchMatrix per node (consistent row dimension).
    For the cloud variant, ``topology``/``weights`` default to a complete
    graph with flat 1/H weights; the topology's failure schedule is keyed
    by the absolute consensus-round counter, which advances by t_p * t_c
    for every atom update actually executed.

    The trace has t_d + 1 entries: entry 0 measures the initial
    (pre-update) dictionary with codes from the first sparse-coding pass,
    and entry t measures the state after iteration t. ``on_iteration``
    is invoked at the same points with the live per-node dictionary and
    code arrays; treat them as read-only snapshots and copy anything you
    keep.
    """
    parts = list(parts)
    if not parts:
        raise ValueError("parts must be non-empty")
    mats = [np.asarray(p.data, dtype=np.float64) for p in parts]
    h = len(mats)
    dim = mats[0].shape[0]
    for p in mats:
        if p.shape[0] != dim:
            raise ValueError("all parts must share the signal dimension")
    if cfg.sparsity > min(dim, cfg.n_atoms):
        raise ValueError(
            f"sparsity={cfg.sparsity} exceeds min(M, N)={min(dim, cfg.n_atoms)}"
        )
    consensus = cfg.variant == "cloud"
    schedule = {}
    if consensus:
        if topology is None:
            topology = build_topology("complete", h)
        if topology.node_count != h:
            raise ValueError(f"topology has {topology.node_count} nodes, data has {h}")
        if weights is None:
            weights = build_weights(topology, "uniform-neighbor")
        if weights.node_count != h:
            raise ValueError(f"weights are {weights.node_count}-node, data has {h}")
        schedule = topology.failure_schedule
        t_c = cfg.t_c
    else:
        weights = None
        t_c = 0

    d_init, d_ref = init_shared(dim, cfg.n_atoms, cfg.seed)
    dicts = [d_init.data.copy() for _ in range(h)]
    codes = [np.zeros((cfg.n_atoms, m.shape[1])) for m in mats]
    trace: list = []
    round_counter = 0

    for t in range(1, cfg.t_d + 1):
        for i in range(h):
            codes[i] = somp_batch(Dictionary(dicts[i]), parts[i], cfg.sparsity,
                                  mode="per-column").data
        if t == 1:
            _record(trace, on_iteration, 0, mats, dicts, codes)
        for n in range(cfg.n_atoms):
            masks = [support_mask(codes[i], n) for i in range(h)]
            if all(m.size == 0 for m in masks):
                continue
            errors = [
                restricted_error(mats[i], dicts[i], codes[i], n, masks[i])
                for i in range(h)
            ]
            q0 = _draw_q_init(cfg.seed, t, n, dim)
            updates = atom_update(errors, d_ref, q0, cfg.t_p, t_c, weights,
                                  schedule, start_round=round_counter)
            if consensus and t_c > 0:
                round_counter += cfg.t_p * t_c
            for i, upd in enumerate(updates):
                if upd is None:
                    continue
                dicts[i][:, n] = upd.atom
                codes[i][n, masks[i].indices] = upd.row_values
        _record(trace, on_iteration, t, mats, dicts, codes)

    return LearnResult(
        dictionaries=[Dictionary(d) for d in dicts],
        codes=[
            SparseCodeMatrix(codes[i], sparsity_k=cfg.sparsity,
                             patch_side=parts[i].patch_side,
                             source_dims=parts[i].source_dims)
            for i in range(h)
        ],
        trace=trace,
    )


def run_local_ksvd(parts: Sequence[PatchMatrix], cfg: LearnConfig,
                   on_iteration: Optional[Callable] = None) -> LearnResult:
    """Consensus-free ablation: every node learns from its block alone.

    Equivalent to run_cloud_ksvd with the consensus stage disabled; with
    a single node this is classical K-SVD with power-iteration rank-1
    updates.
    """
    local_cfg = dataclasses.replace(cfg, variant="local")
    return run_cloud_ksvd(parts, local_cfg, on_iteration=on_iteration)

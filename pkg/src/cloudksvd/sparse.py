"""Greedy sparse coding: orthogonal matching pursuit, single and batched.

The batched per-column mode is literally a loop over the single-column
routine, so the two agree to the last bit. The shared-support mode selects
one support for a whole batch by summing absolute correlations across
columns, as in simultaneous OMP.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .imaging import PatchMatrix

_RESIDUAL_TOL = 1e-12


@dataclass(frozen=True)
class Dictionary:
    """An M x N matrix whose columns (atoms) have unit l2 norm."""

    data: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.float64)
        if d.ndim != 2 or d.shape[0] < 1 or d.shape[1] < 1:
            raise ValueError(f"dictionary must be a non-empty 2-D array, got {d.shape}")
        if not np.all(np.isfinite(d)):
            raise ValueError("dictionary entries must be finite")
        norms = np.linalg.norm(d, axis=0)
        if np.any(np.abs(norms - 1.0) > 1e-9):
            worst = int(np.argmax(np.abs(norms - 1.0)))
            raise ValueError(f"atom {worst} has norm {norms[worst]!r}, expected 1")
        object.__setattr__(self, "data", d)

    @property
    def dim_m(self) -> int:
        return self.data.shape[0]

    @property
    def n_atoms(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class SparseCodeMatrix:
    """N x Q coefficient matrix with at most ``sparsity_k`` nonzeros per column.

    Carries the patch metadata of the signals it encodes so that a
    reconstruction can be reassembled into an image.
    """

    data: np.ndarray
    sparsity_k: int
    patch_side: int | None = None
    source_dims: tuple[int, int] | None = None

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.float64)
        if d.ndim != 2:
            raise ValueError(f"codes must be 2-D, got {d.shape}")
        if self.sparsity_k < 0:
            raise ValueError(f"sparsity_k must be >= 0, got {self.sparsity_k}")
        nnz = np.count_nonzero(d, axis=0)
        if d.shape[1] and nnz.max(initial=0) > self.sparsity_k:
            worst = int(np.argmax(nnz))
            raise ValueError(
                f"column {worst} has {nnz[worst]} nonzeros, exceeds K={self.sparsity_k}"
            )
        object.__setattr__(self, "data", d)

    @property
    def n_atoms(self) -> int:
        return self.data.shape[0]

    @property
    def count_q(self) -> int:
        return self.data.shape[1]


def _ls_on_support(atoms: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Least-squares coefficients of y against the selected atoms (via QR)."""
    q, r = np.linalg.qr(atoms)
    return np.linalg.solve(r, q.T @ y)


def _omp_column(dict_data: np.ndarray, y: np.ndarray, k: int):
    """Run OMP on one column. Returns (support list, coefficient array).

    Selection maximizes |<atom, residual>|, ties going to the lowest atom
    index (np.argmax). Each step refits all selected coefficients by least
    squares, so selected correlations are driven to zero and an atom can
    never be picked twice; the explicit membership check is a guard for the
    all-zero-correlation corner.
    """
    residual = y.astype(np.float64, copy=True)
    support: list[int] = []
    coef = np.zeros(0)
    for _ in range(k):
        if np.linalg.norm(residual) < _RESIDUAL_TOL:
            break
        corr = dict_data.T @ residual
        best = int(np.argmax(np.abs(corr)))
        if corr[best] == 0.0 or best in support:
            break
        support.append(best)
        atoms = dict_data[:, support]
        coef = _ls_on_support(atoms, y)
        residual = y - atoms @ coef
    return support, coef


def omp_single(dictionary: Dictionary, y: np.ndarray, k: int) -> np.ndarray:
    """Code one signal with at most k atoms of the dictionary.

    Returns a dense length-N vector with at most k nonzero entries. k = 0
    yields the zero vector.
    """
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (dictionary.dim_m,):
        raise ValueError(f"signal shape {y.shape} does not match dim_m={dictionary.dim_m}")
    if not np.all(np.isfinite(y)):
        raise ValueError("signal must be finite")
    if k < 0 or k > min(dictionary.dim_m, dictionary.n_atoms):
        raise ValueError(
            f"k={k} outside [0, min(M, N)={min(dictionary.dim_m, dictionary.n_atoms)}]"
        )
    support, coef = _omp_column(dictionary.data, y, k)
    x = np.zeros(dictionary.n_atoms)
    x[support] = coef
    return x


def _somp_shared(dict_data: np.ndarray, y: np.ndarray, k: int) -> np.ndarray:
    """Shared-support simultaneous OMP over all columns of y."""
    n = dict_data.shape[1]
    x = np.zeros((n, y.shape[1]))
    residual = y.copy()
    support: list[int] = []
    coef = np.zeros((0, y.shape[1]))
    for _ in range(k):
        if np.linalg.norm(residual, axis=0).max(initial=0.0) < _RESIDUAL_TOL:
            break
        score = np.abs(dict_data.T @ residual).sum(axis=1)
        score[support] = -1.0
        best = int(np.argmax(score))
        if score[best] <= 0.0:
            break
        support.append(best)
        atoms = dict_data[:, support]
        q, r = np.linalg.qr(atoms)
        coef = np.linalg.solve(r, q.T @ y)
        residual = y - atoms @ coef
    x[support, :] = coef
    return x


def somp_batch(dictionary: Dictionary, signals: PatchMatrix, k: int,
               mode: str = "per-column") -> SparseCodeMatrix:
    """Code a batch of signals.

    mode='per-column' codes each column independently (identical to
    omp_single column by column); mode='shared-support' picks one common
    support for the whole batch by summed absolute correlation.
    """
    if mode not in ("per-column", "shared-support"):
        raise ValueError(f"unknown mode {mode!r}")
    y = signals.data
    if y.shape[0] != dictionary.dim_m:
        raise ValueError(f"signal dim {y.shape[0]} does not match dim_m={dictionary.dim_m}")
    if not np.all(np.isfinite(y)):
        raise ValueError("signals must be finite")
    if k < 0 or k > min(dictionary.dim_m, dictionary.n_atoms):
        raise ValueError(
            f"k={k} outside [0, min(M, N)={min(dictionary.dim_m, dictionary.n_atoms)}]"
        )
    if mode == "per-column":
        x = np.zeros((dictionary.n_atoms, y.shape[1]))
        for col in range(y.shape[1]):
            support, coef = _omp_column(dictionary.data, y[:, col], k)
            x[support, col] = coef
    else:
        x = _somp_shared(dictionary.data, y, k)
    return SparseCodeMatrix(x, sparsity_k=k, patch_side=signals.patch_side,
                            source_dims=signals.source_dims)


def reconstruct(dictionary: Dictionary, codes: SparseCodeMatrix) -> PatchMatrix:
    """Dense reconstruction D @ X, preserving patch metadata from the codes."""
    if codes.n_atoms != dictionary.n_atoms:
        raise ValueError(
            f"codes have {codes.n_atoms} rows, dictionary has {dictionary.n_atoms} atoms"
        )
    return PatchMatrix(dictionary.data @ codes.data, patch_side=codes.patch_side,
                       source_dims=codes.source_dims)

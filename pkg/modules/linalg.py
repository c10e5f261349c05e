"""Degree normalization and randomized truncated SVD of the interaction matrix."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Union
import logging

import numpy as np
import scipy.sparse as sp

from .dataset import BipartiteGraph, InteractionMatrix
from .utils import derive_rng

logger = logging.getLogger(__name__)

ORACLE_MAX_DIM = 256


@dataclass(frozen=True, eq=False)
class NormalizedMatrix:
    """``A~(u,p) = A(u,p) / sqrt(rowD(u) * colD(p))`` in the CSR layout of ``A``."""

    csr: sp.csr_matrix

    @property
    def shape(self) -> tuple[int, int]:
        return self.csr.shape

    def toarray(self) -> np.ndarray:
        return self.csr.toarray()


@dataclass(frozen=True, eq=False)
class TruncatedFactors:
    """Rank-``q`` factors ``left @ diag(sigma) @ right.T`` (sigma descending)."""

    left: np.ndarray
    sigma: np.ndarray
    right: np.ndarray

    @property
    def q(self) -> int:
        return int(self.sigma.shape[0])

    @property
    def n_users(self) -> int:
        return int(self.left.shape[0])

    @property
    def n_items(self) -> int:
        return int(self.right.shape[0])

    def reconstruct_rows(self, users: np.ndarray) -> np.ndarray:
        """Rows ``users`` of the reconstruction, shape ``(len(users), n_items)``."""

        return (self.left[users] * self.sigma) @ self.right.T

    def to_dense(self) -> np.ndarray:
        return (self.left * self.sigma) @ self.right.T


MatrixLike = Union[NormalizedMatrix, sp.spmatrix, np.ndarray]


def normalize_adjacency(A: InteractionMatrix, graph: BipartiteGraph) -> NormalizedMatrix:
    """Symmetric degree normalization of the binary interaction matrix."""

    if (A.n_rows, A.n_cols) != (graph.n_users, graph.n_items) or A.nnz != graph.nnz:
        raise ValueError("interaction matrix and graph disagree on shape or edge count")

    csr = A.csr.astype(np.float64, copy=True)
    row_users = np.repeat(np.arange(csr.shape[0]), np.diff(csr.indptr))
    row_deg = graph.row_degrees[row_users].astype(np.float64)
    col_deg = graph.col_degrees[csr.indices].astype(np.float64)
    csr.data = 1.0 / np.sqrt(row_deg * col_deg)
    logger.debug("Normalized %dx%d matrix (nnz=%d)", csr.shape[0], csr.shape[1], csr.nnz)
    return NormalizedMatrix(csr=csr)


def randomized_svd(
    A_tilde: MatrixLike,
    q: int,
    oversample: int = 10,
    n_power: int = 4,
    seed: int = 0,
) -> TruncatedFactors:
    """Truncated SVD from a Gaussian range sketch with power iterations.

    The sketch width is ``q + oversample`` capped at ``min(|U|, |P|)``; every
    power iteration re-orthonormalizes both sides with a reduced QR.
    """

    matrix = A_tilde.csr if isinstance(A_tilde, NormalizedMatrix) else A_tilde
    n_rows, n_cols = matrix.shape
    if not 1 <= q <= min(n_rows, n_cols):
        raise ValueError(f"rank q={q} out of range [1, {min(n_rows, n_cols)}]")
    if oversample < 0 or n_power < 0:
        raise ValueError("oversample and n_power must be non-negative")

    width = min(q + oversample, n_rows, n_cols)
    logger.info("Randomized SVD %dx%d q=%d width=%d power=%d", n_rows, n_cols, q, width, n_power)

    omega = derive_rng(seed, "sketch").standard_normal((n_cols, width))
    basis, _ = np.linalg.qr(np.asarray(matrix @ omega))
    for _ in range(n_power):
        co_basis, _ = np.linalg.qr(np.asarray(matrix.T @ basis))
        basis, _ = np.linalg.qr(np.asarray(matrix @ co_basis))

    small = np.asarray(matrix.T @ basis).T
    u_small, sigma, vt = np.linalg.svd(small, full_matrices=False)
    left = basis @ u_small
    return TruncatedFactors(
        left=np.ascontiguousarray(left[:, :q]),
        sigma=sigma[:q].copy(),
        right=np.ascontiguousarray(vt[:q].T),
    )


def reconstruct_row(factors: TruncatedFactors, u: int) -> np.ndarray:
    """Row ``u`` of ``M_q diag(sigma_q) N_q^T`` in O(q * |P|)."""

    if not 0 <= u < factors.n_users:
        raise IndexError(f"user index {u} out of range [0, {factors.n_users})")
    return (factors.left[u] * factors.sigma) @ factors.right.T


def exact_svd_oracle(dense: np.ndarray) -> TruncatedFactors:
    """Full thin SVD of a small dense matrix by a direct LAPACK method."""

    dense = np.asarray(dense, dtype=np.float64)
    if dense.ndim != 2:
        raise ValueError("oracle expects a 2-D matrix")
    if max(dense.shape) > ORACLE_MAX_DIM:
        raise ValueError(f"oracle limited to {ORACLE_MAX_DIM}x{ORACLE_MAX_DIM}, got {dense.shape}")
    u, sigma, vt = np.linalg.svd(dense, full_matrices=False)
    return TruncatedFactors(left=u, sigma=sigma, right=vt.T)


__all__ = [
    "NormalizedMatrix",
    "TruncatedFactors",
    "exact_svd_oracle",
    "normalize_adjacency",
    "randomized_svd",
    "reconstruct_row",
]

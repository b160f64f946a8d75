"""Dense symmetric eigensolver, affinity assembly and spectral clustering."""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Sequence

import numba
import numpy as np

from .data import Partition
from .kmeans import kmeans

log = logging.getLogger(__name__)

DEFAULT_TAU = 1e-3


class EigenError(ValueError):
    pass


@numba.njit(cache=True)
def _jacobi_sweeps(A, Vt, target, max_sweeps):
    # Cyclic-by-row Jacobi; A is overwritten with its diagonalisation and
    # Vt accumulates the rotations (eigenvectors as rows).
    n = A.shape[0]
    for sweep in range(max_sweeps):
        off = 0.0
        for i in range(n):
            for j in range(n):
                if i != j:
                    off += A[i, j] * A[i, j]
        if np.sqrt(off) <= target:
            return sweep
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if apq == 0.0:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                t = (1.0 if theta >= 0 else -1.0) / (abs(theta) + np.hypot(theta, 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                for r in range(n):
                    arp = A[r, p]
                    arq = A[r, q]
                    A[r, p] = c * arp - s * arq
                    A[r, q] = s * arp + c * arq
                for r in range(n):
                    apr = A[p, r]
                    aqr = A[q, r]
                    A[p, r] = c * apr - s * aqr
                    A[q, r] = s * apr + c * aqr
                A[p, q] = 0.0
                A[q, p] = 0.0
                for r in range(n):
                    vp = Vt[p, r]
                    vq = Vt[q, r]
                    Vt[p, r] = c * vp - s * vq
                    Vt[q, r] = s * vp + c * vq
    return -1


def jacobi_eigh(M: np.ndarray, tol: float = 1e-12, max_sweeps: int = 100):
    """All eigenpairs of a symmetric matrix by cyclic Jacobi rotations.

    Sweeps visit every off-diagonal pair (p, q) in row order and annihilate
    it with a plane rotation. Iteration stops once the off-diagonal
    Frobenius mass falls below ``tol * ||M||_F``.

    Returns ``(eigenvalues, V)`` with eigenvalues in ascending order and the
    eigenvectors in the columns of ``V``.
    """
    A = np.array(M, dtype=np.float64, copy=True)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise EigenError("matrix must be square")
    n = A.shape[0]
    scale = np.linalg.norm(A)
    if not np.isfinite(scale):
        raise EigenError("matrix has non-finite entries")
    if np.linalg.norm(A - A.T) > 1e-8 * max(scale, 1.0):
        raise EigenError("matrix is not symmetric")
    A = np.ascontiguousarray(0.5 * (A + A.T))
    Vt = np.eye(n)
    if n > 1 and scale > 0:
        if _jacobi_sweeps(A, Vt, tol * scale, max_sweeps) < 0:
            log.warning("Jacobi eigensolver hit %d sweeps without converging", max_sweeps)
    w = np.diag(A).copy()
    order = np.argsort(w, kind="stable")
    return w[order], Vt.T[:, order]


def top_eigenvectors(M: np.ndarray, k: int):
    """The ``k`` largest eigenvalues (descending) and their orthonormal eigenvectors."""
    M = np.asarray(M, dtype=np.float64)
    if k > M.shape[0]:
        raise EigenError(f"k={k} exceeds matrix order {M.shape[0]}")
    w, V = jacobi_eigh(M)
    idx = np.arange(len(w) - 1, len(w) - 1 - k, -1)
    return w[idx], V[:, idx]


def view_affinity(U: np.ndarray, tau: float = DEFAULT_TAU) -> np.ndarray:
    """Per-view affinity ``U U^T`` after zeroing entries of ``U`` below ``tau`` in magnitude."""
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    U = np.where(np.abs(U) < tau, 0.0, np.asarray(U, dtype=np.float64))
    W = U @ U.T
    W = 0.5 * (W + W.T)
    return np.maximum(W, 0.0)


def consensus_affinity(per_view: Sequence[np.ndarray]) -> np.ndarray:
    """Elementwise mean of the per-view affinities."""
    mats = [np.asarray(W, dtype=np.float64) for W in per_view]
    if not mats:
        raise ValueError("need at least one affinity matrix")
    shape = mats[0].shape
    if any(W.shape != shape for W in mats):
        raise ValueError("affinity matrices differ in shape")
    return sum(mats) / len(mats)


def spectral_embedding(W: np.ndarray, k: int) -> np.ndarray:
    """Row-normalised leading eigenvectors of ``D^-1/2 W D^-1/2``.

    These are the eigenvectors of the smallest eigenvalues of the symmetric
    normalised Laplacian ``I - D^-1/2 W D^-1/2``.
    """
    W = np.asarray(W, dtype=np.float64)
    deg = W.sum(axis=1)
    deg = np.where(deg > 0, deg, 1e-12)
    inv_sqrt = 1.0 / np.sqrt(deg)
    N = inv_sqrt[:, None] * W * inv_sqrt[None, :]
    N = 0.5 * (N + N.T)
    _, Y = top_eigenvectors(N, k)
    norms = np.linalg.norm(Y, axis=1, keepdims=True)
    return np.divide(Y, norms, out=np.zeros_like(Y), where=norms > 0)


def spectral_clustering(W: np.ndarray, k: int, seed=0, restarts: int = 10) -> Partition:
    """Normalised spectral clustering of an affinity matrix into ``k`` groups."""
    if k < 2:
        raise ValueError("spectral clustering needs k >= 2")
    Y = spectral_embedding(W, k)
    return kmeans(Y, k, restarts=restarts, seed=seed).labels


def write_pgm(path, W: np.ndarray) -> None:
    """ASCII PGM (P2) heatmap, linearly scaled so the largest entry maps to 255."""
    W = np.asarray(W, dtype=np.float64)
    peak = W.max() if W.size else 0.0
    scaled = np.zeros(W.shape, dtype=np.int64)
    if peak > 0:
        scaled = np.rint(np.clip(W, 0.0, None) / peak * 255.0).astype(np.int64)
    rows, cols = W.shape
    lines = ["P2", f"{cols} {rows}", "255"]
    lines.extend(" ".join(str(v) for v in row) for row in scaled)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_pgm(path) -> np.ndarray:
    tokens = [t for line in Path(path).read_text(encoding="utf-8").splitlines()
              if not line.startswith("#") for t in line.split()]
    if tokens[0] != "P2":
        raise ValueError("not an ASCII PGM file")
    cols, rows, _maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    return np.array(tokens[4:], dtype=np.int64).reshape(rows, cols)

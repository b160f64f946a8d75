"""Gaussian s-nearest-neighbour similarity graphs and their Laplacians."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_NEIGHBORS = 20


class DegenerateViewError(ValueError):
    """All samples of a view coincide, so no bandwidth can be estimated."""


@dataclass(frozen=True)
class SimilarityGraph:
    W: np.ndarray
    sigma: float
    s: int

    def neighbor_lists(self) -> list:
        return [np.flatnonzero(row) for row in self.W]


@dataclass(frozen=True)
class GraphLaplacian:
    L: np.ndarray
    H: np.ndarray  # degrees, the diagonal of the degree matrix

    @property
    def degree_matrix(self) -> np.ndarray:
        return np.diag(self.H)


def sq_distances(points: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances between the rows of ``points``."""
    points = np.asarray(points, dtype=np.float64)
    sq = np.einsum("ij,ij->i", points, points)
    d2 = sq[:, None] + sq[None, :] - 2.0 * points @ points.T
    np.maximum(d2, 0.0, out=d2)
    np.fill_diagonal(d2, 0.0)
    return d2


def _samples(X) -> np.ndarray:
    X = getattr(X, "values", X)
    return np.asarray(X, dtype=np.float64).T  # n x d_i


def knn_indices(d2: np.ndarray, s: int) -> np.ndarray:
    """Indices of the ``s`` nearest other samples, ties broken by smaller index."""
    n = d2.shape[0]
    d2 = d2.copy()
    d2[np.arange(n), np.arange(n)] = np.inf
    order = np.argsort(d2, axis=1, kind="stable")
    return order[:, :s]


def clamp_neighbors(s: int, n: int) -> int:
    return max(1, min(int(s), n - 1))


def estimate_sigma(X, s: int = DEFAULT_NEIGHBORS) -> float:
    """Median distance from each sample to its ``s``-th nearest neighbour.

    Falls back to the smallest positive pairwise distance when the median is
    zero.
    """
    pts = _samples(X)
    n = pts.shape[0]
    if n < 2:
        raise DegenerateViewError("need at least two samples")
    if s > n - 1:
        raise ValueError(f"s={s} needs at least {s + 1} samples, got {n}")
    d2 = sq_distances(pts)
    nn = knn_indices(d2, s)
    kth = np.sqrt(d2[np.arange(n), nn[:, s - 1]])
    sigma = float(np.median(kth))
    if sigma > 0:
        return sigma
    dist = np.sqrt(d2[np.triu_indices(n, 1)])
    positive = dist[dist > 0]
    if positive.size == 0:
        raise DegenerateViewError("degenerate view: all samples are identical")
    return float(positive.min())


def gaussian_similarity(X, sigma: float, s: int = DEFAULT_NEIGHBORS) -> SimilarityGraph:
    """Gaussian kernel restricted to the symmetrised ``s``-NN graph.

    An edge (j, k) is kept when either endpoint selects the other; the kernel
    value is exp(-|x_j - x_k|^2 / (2 sigma^2)). The diagonal is zero.
    """
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    pts = _samples(X)
    n = pts.shape[0]
    if not 1 <= s < n:
        raise ValueError(f"need 1 <= s < n, got s={s}, n={n}")
    d2 = sq_distances(pts)
    nn = knn_indices(d2, s)
    mask = np.zeros((n, n), dtype=bool)
    mask[np.repeat(np.arange(n), s), nn.ravel()] = True
    mask |= mask.T
    W = np.where(mask, np.exp(-d2 / (2.0 * sigma**2)), 0.0)
    np.fill_diagonal(W, 0.0)
    return SimilarityGraph(W, float(sigma), int(s))


def build_graph(X, s: int = DEFAULT_NEIGHBORS) -> SimilarityGraph:
    """Estimate sigma and build the kNN Gaussian graph, clamping ``s`` to ``n - 1``."""
    n = _samples(X).shape[0]
    s = clamp_neighbors(s, n)
    return gaussian_similarity(X, estimate_sigma(X, s), s)


def laplacian(g) -> GraphLaplacian:
    """Unnormalized Laplacian ``L = H - W`` with ``H`` the diagonal of row sums."""
    W = np.asarray(getattr(g, "W", g), dtype=np.float64)
    H = W.sum(axis=1)
    L = -W.copy()
    L[np.diag_indices_from(L)] += H
    return GraphLaplacian(L, H)

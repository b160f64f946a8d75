"""Lloyd's k-means with k-means++ seeding and best-of-restarts selection."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Partition


@dataclass
class KMeansResult:
    labels: Partition
    centers: np.ndarray
    inertia: float
    iterations: int
    history: list = field(default_factory=list)  # inertia after each Lloyd step of the winning restart


def _sq_dist_to_centers(points, centers):
    d2 = (
        np.einsum("ij,ij->i", points, points)[:, None]
        - 2.0 * points @ centers.T
        + np.einsum("ij,ij->i", centers, centers)[None, :]
    )
    return np.maximum(d2, 0.0)


def _plusplus(points, k, rng):
    n = points.shape[0]
    centers = np.empty((k, points.shape[1]))
    centers[0] = points[rng.integers(n)]
    closest = _sq_dist_to_centers(points, centers[:1])[:, 0]
    for c in range(1, k):
        total = closest.sum()
        if total > 0:
            idx = int(np.searchsorted(np.cumsum(closest), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        else:
            idx = int(rng.integers(n))
        centers[c] = points[idx]
        closest = np.minimum(closest, _sq_dist_to_centers(points, centers[c : c + 1])[:, 0])
    return centers


def _repair_empty(points, labels, centers, k):
    # Move the point farthest from its center into each empty cluster.
    counts = np.bincount(labels, minlength=k)
    while np.any(counts == 0):
        empty = int(np.flatnonzero(counts == 0)[0])
        dist = np.sum((points - centers[labels]) ** 2, axis=1)
        dist[counts[labels] <= 1] = -1.0  # never empty another cluster
        far = int(np.argmax(dist))
        counts[labels[far]] -= 1
        labels[far] = empty
        counts[empty] = 1
        centers[empty] = points[far]
    return labels


def _centers_of(points, labels, k):
    sums = np.zeros((k, points.shape[1]))
    np.add.at(sums, labels, points)
    return sums / np.bincount(labels, minlength=k)[:, None]


def _inertia(points, labels, centers):
    return float(np.sum((points - centers[labels]) ** 2))


def _lloyd(points, k, max_iter, rng):
    centers = _plusplus(points, k, rng)
    labels = np.argmin(_sq_dist_to_centers(points, centers), axis=1)
    labels = _repair_empty(points, labels, centers, k)
    centers = _centers_of(points, labels, k)
    history = [_inertia(points, labels, centers)]
    it = 0
    for it in range(1, max_iter + 1):
        d2 = _sq_dist_to_centers(points, centers)
        # keep the current label on ties so assignments cannot oscillate
        current = d2[np.arange(len(labels)), labels]
        new = np.argmin(d2, axis=1)
        new = np.where(d2[np.arange(len(new)), new] < current, new, labels)
        new = _repair_empty(points, new, centers, k)
        if np.array_equal(new, labels):
            break
        labels = new
        centers = _centers_of(points, labels, k)
        history.append(_inertia(points, labels, centers))
    return labels, centers, history[-1], it, history


def kmeans(
    points: np.ndarray,
    k: int,
    restarts: int = 10,
    max_iter: int = 300,
    seed=0,
) -> KMeansResult:
    """Cluster the rows of ``points`` into ``k`` groups.

    Runs ``restarts`` independent k-means++ initialisations and keeps the one
    with the lowest inertia (earliest restart wins ties). Every cluster is
    nonempty on return.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim == 1:
        points = points[:, None]
    n = points.shape[0]
    if k < 1:
        raise ValueError("k must be positive")
    if n < k:
        raise ValueError(f"cannot form {k} clusters from {n} points")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(max(1, restarts)):
        run = _lloyd(points, k, max_iter, rng)
        if best is None or run[2] < best[2]:
            best = run
    labels, centers, inertia, iterations, history = best
    return KMeansResult(Partition(labels, k), centers, inertia, iterations, history)

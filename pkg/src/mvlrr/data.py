"""Multi-view datasets: containers, CSV ingestion, synthetic generation and
uniform-noise corruption.

Views are stored features-by-samples (``d_i x n``); CSV files are read and
written samples-by-features by default and transposed once at the boundary.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

SAMPLES_BY_FEATURES = "samples"
FEATURES_BY_SAMPLES = "features"


class DataError(ValueError):
    """Raised for malformed input data."""


@dataclass(frozen=True)
class Partition:
    """A labeling of ``n`` samples into ``k`` clusters (labels in ``[0, k)``)."""

    labels: np.ndarray
    k: int

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64).ravel()
        if labels.size == 0:
            raise DataError("partition must label at least one sample")
        if labels.min() < 0 or labels.max() >= self.k:
            raise DataError(f"labels must lie in [0, {self.k})")
        object.__setattr__(self, "labels", labels)

    @classmethod
    def from_labels(cls, labels) -> "Partition":
        """Build a partition from arbitrary hashable labels, compacting them to 0..k-1."""
        _, inverse = np.unique(np.asarray(labels).ravel(), return_inverse=True)
        return cls(inverse.astype(np.int64), int(inverse.max()) + 1)

    @property
    def n(self) -> int:
        return int(self.labels.size)

    def sizes(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.k)


@dataclass(frozen=True)
class ViewMatrix:
    values: np.ndarray  # d_i x n
    view_id: int = 0

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or values.size == 0:
            raise DataError("a view must be a non-empty 2-D matrix")
        if not np.all(np.isfinite(values)):
            raise DataError(f"view {self.view_id} contains NaN or Inf")
        object.__setattr__(self, "values", values)

    @property
    def feature_dim(self) -> int:
        return self.values.shape[0]

    @property
    def n(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class MultiViewDataset:
    views: tuple
    ground_truth: Optional[Partition] = None
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        views = tuple(self.views)
        if not views:
            raise DataError("a dataset needs at least one view")
        n = views[0].n
        for v in views:
            if v.n != n:
                raise DataError(
                    f"sample count mismatch: view {v.view_id} has {v.n} samples, expected {n}"
                )
        if self.ground_truth is not None and self.ground_truth.n != n:
            raise DataError(
                f"ground truth has {self.ground_truth.n} labels for {n} samples"
            )
        object.__setattr__(self, "views", views)

    @property
    def n(self) -> int:
        return self.views[0].n

    @property
    def view_count(self) -> int:
        return len(self.views)

    def matrices(self) -> list:
        return [v.values for v in self.views]


def _parse_float(cell: str, path, row: int) -> float:
    try:
        value = float(cell)
    except ValueError:
        raise DataError(f"{path}: non-numeric cell {cell!r} on line {row + 1}") from None
    if not np.isfinite(value):
        raise DataError(f"{path}: non-finite value {cell!r} on line {row + 1}")
    return value


def _is_numeric_row(row) -> bool:
    try:
        [float(c) for c in row]
    except ValueError:
        return False
    return True


def read_matrix_csv(path) -> np.ndarray:
    """Read a CSV of reals as written; a non-numeric first row is taken as a header."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if rows and not _is_numeric_row(rows[0]):
        rows = rows[1:]
    if not rows:
        raise DataError(f"{path}: empty file")
    width = len(rows[0])
    out = np.empty((len(rows), width))
    for i, row in enumerate(rows):
        if len(row) != width:
            raise DataError(f"{path}: ragged row on line {i + 1}")
        out[i] = [_parse_float(c.strip(), path, i) for c in row]
    return out


def write_matrix_csv(path, matrix: np.ndarray) -> None:
    """Write a matrix with 12 significant digits per entry."""
    matrix = np.atleast_2d(np.asarray(matrix, dtype=np.float64))
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        for row in matrix:
            fh.write(",".join(format(x, ".12g") for x in row))
            fh.write("\n")


def read_labels(path) -> np.ndarray:
    """Read a labels file: one integer per line."""
    path = Path(path)
    labels = []
    with path.open(encoding="utf-8") as fh:
        for i, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            try:
                labels.append(int(line))
            except ValueError:
                raise DataError(f"{path}: non-integer label {line!r} on line {i + 1}") from None
    if not labels:
        raise DataError(f"{path}: empty file")
    return np.asarray(labels, dtype=np.int64)


def write_labels(path, labels) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for lab in np.asarray(labels).ravel():
            fh.write(f"{int(lab)}\n")


def load_views(
    paths: Sequence,
    orientation: str = SAMPLES_BY_FEATURES,
    labels_path=None,
) -> MultiViewDataset:
    """Load one view per CSV file, in path order.

    ``orientation`` is ``"samples"`` when rows are samples (the default) or
    ``"features"`` when rows are feature dimensions.
    """
    if orientation not in (SAMPLES_BY_FEATURES, FEATURES_BY_SAMPLES):
        raise DataError(f"unknown orientation {orientation!r}")
    if not paths:
        raise DataError("no view files given")
    views = []
    for i, p in enumerate(paths):
        m = read_matrix_csv(p)
        if orientation == SAMPLES_BY_FEATURES:
            m = m.T
        views.append(ViewMatrix(np.ascontiguousarray(m), view_id=i))
    counts = {v.n for v in views}
    if len(counts) > 1:
        detail = ", ".join(f"{p}: {v.n}" for p, v in zip(paths, views))
        raise DataError(f"sample count mismatch ({detail})")
    truth = None
    if labels_path is not None:
        truth = Partition.from_labels(read_labels(labels_path))
    return MultiViewDataset(tuple(views), truth)


def save_views(dataset: MultiViewDataset, directory, orientation: str = SAMPLES_BY_FEATURES) -> list:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for i, v in enumerate(dataset.views):
        path = directory / f"view{i}.csv"
        write_matrix_csv(path, v.values.T if orientation == SAMPLES_BY_FEATURES else v.values)
        written.append(path)
    if dataset.ground_truth is not None:
        path = directory / "labels.csv"
        write_labels(path, dataset.ground_truth.labels)
        written.append(path)
    return written


def _random_map(rng: np.random.Generator, out_dim: int, in_dim: int) -> np.ndarray:
    # Orthonormal columns preserve latent distances when out_dim >= in_dim.
    g = rng.standard_normal((max(out_dim, in_dim), min(out_dim, in_dim)))
    q, r = np.linalg.qr(g)
    q = q * np.sign(np.diag(r))
    return q if out_dim >= in_dim else q.T


def synth_multiview(
    n: int,
    d_clusters: int,
    dims: Sequence[int],
    separation: float = 10.0,
    noise_std: float = 0.1,
    seed: int = 0,
) -> MultiViewDataset:
    """Balanced Gaussian blobs observed through independent random linear maps.

    Latent centers are the scaled vertices of a randomly rotated simplex, so
    every pair sits exactly ``separation`` apart. Sample ``j`` belongs to
    cluster ``j % d_clusters``.
    """
    dims = list(dims)
    if not dims:
        raise DataError("dims must name at least one view")
    if any(int(d) < 1 for d in dims):
        raise DataError("every view dimension must be positive")
    if d_clusters < 2:
        raise DataError("need at least two clusters")
    if n < d_clusters:
        raise DataError(f"n={n} is smaller than d_clusters={d_clusters}")
    if not separation > 0:
        raise DataError("separation must be positive")
    if noise_std < 0:
        raise DataError("noise_std must be nonnegative")

    rng = np.random.default_rng(seed)
    rotation = _random_map(rng, d_clusters, d_clusters)
    centers = (separation / np.sqrt(2.0)) * rotation  # rows are centers
    labels = np.arange(n) % d_clusters
    latent = centers[labels].T  # d_clusters x n

    views = []
    for i, dim in enumerate(dims):
        A = _random_map(rng, int(dim), d_clusters)
        X = A @ latent + noise_std * rng.standard_normal((int(dim), n))
        views.append(ViewMatrix(X, view_id=i))
    meta = {
        "generator": "synth_multiview",
        "n": n,
        "d_clusters": d_clusters,
        "dims": [int(d) for d in dims],
        "separation": float(separation),
        "noise_std": float(noise_std),
        "seed": seed,
    }
    return MultiViewDataset(tuple(views), Partition(labels, d_clusters), meta)


def corrupt_matrix(
    X: np.ndarray,
    fraction: float,
    low: float,
    high: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """Replace ``floor(fraction * X.size)`` distinct entries with draws from U[low, high]."""
    out = np.array(X, dtype=np.float64, copy=True)
    m = int(np.floor(fraction * out.size))
    if m:
        idx = rng.choice(out.size, size=m, replace=False)
        out.flat[idx] = rng.uniform(low, high, size=m)
    return out


def corrupt(
    dataset: MultiViewDataset,
    fraction: float = 0.2,
    low: float = -5.0,
    high: float = 5.0,
    seed: int = 0,
) -> MultiViewDataset:
    """Corrupt each view independently with uniform replacement noise."""
    if not 0.0 <= fraction <= 1.0:
        raise DataError("fraction must lie in [0, 1]")
    if not low < high:
        raise DataError("low must be smaller than high")
    rng = np.random.default_rng(seed)
    views = tuple(
        ViewMatrix(corrupt_matrix(v.values, fraction, low, high, rng), v.view_id)
        for v in dataset.views
    )
    meta = dict(dataset.meta)
    meta["corruption"] = {"fraction": fraction, "low": low, "high": high, "seed": seed}
    return replace(dataset, views=views, meta=meta)

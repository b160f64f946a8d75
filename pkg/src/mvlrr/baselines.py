"""Reference clusterings: early-fusion concatenation and single-view spectral clustering."""

from __future__ import annotations

import numpy as np

from .data import MultiViewDataset, Partition
from .graph import DEFAULT_NEIGHBORS, build_graph
from .spectral import spectral_clustering


def _graph_cluster(X: np.ndarray, k: int, s: int, seed) -> Partition:
    g = build_graph(X, s)
    return spectral_clustering(g.W, k, seed=seed)


def concat_baseline(dataset: MultiViewDataset, k: int, s: int = DEFAULT_NEIGHBORS, seed=0) -> Partition:
    """Stack every view's features and run spectral clustering on one kNN graph.

    The kernel bandwidth is re-estimated on the stacked features.
    """
    stacked = np.vstack(dataset.matrices())
    return _graph_cluster(stacked, k, s, seed)


def single_view_baseline(
    dataset: MultiViewDataset, view: int, k: int, s: int = DEFAULT_NEIGHBORS, seed=0
) -> Partition:
    if not 0 <= view < dataset.view_count:
        raise IndexError(f"view index {view} out of range for {dataset.view_count} views")
    return _graph_cluster(dataset.views[view].values, k, s, seed)

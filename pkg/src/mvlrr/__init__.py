"""Multi-view clustering by low-rank factorisation with graph and agreement regularisers."""

from .data import MultiViewDataset, Partition, ViewMatrix, corrupt, load_views, synth_multiview
from .metrics import acc, nmi
from .solver import SolverConfig, fit, solve
from .spectral import consensus_affinity, spectral_clustering, view_affinity

__all__ = [
    "MultiViewDataset",
    "Partition",
    "SolverConfig",
    "ViewMatrix",
    "acc",
    "consensus_affinity",
    "corrupt",
    "fit",
    "load_views",
    "nmi",
    "solve",
    "spectral_clustering",
    "synth_multiview",
    "view_affinity",
]

__version__ = "0.1.0"

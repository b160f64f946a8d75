"""Alternating augmented-Lagrangian solver for the structured low-rank
factorisation model.

Each view ``i`` carries a data-cluster factor ``U_i`` (n x d) with
``Z_i = U_i U_i^T``, and the per-view problem is

    min  1/2 |U|_F^2 + lambda1 |E|_1 + lambda2 Tr(U^T L U)
         + beta/2 sum_{j != i} |U - U_j|_F^2
    s.t. X = D U^T + E,  D = X U,  G = U,  G >= 0

with multipliers ``K1`` (X = DU^T + E), ``K2`` (U = G) and ``K3`` (D = XU).
Views are coupled only through the agreement term, which reads the other
views' factors from the previous outer iteration.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .data import MultiViewDataset, Partition, corrupt_matrix
from .graph import DegenerateViewError, GraphLaplacian, build_graph, laplacian
from .kmeans import kmeans
from .metrics import hungarian
from .spectral import spectral_clustering

log = logging.getLogger(__name__)

FAITHFUL = "faithful"
GRADIENT_CONSISTENT = "gradient_consistent"
U_UPDATE_MODES = (FAITHFUL, GRADIENT_CONSISTENT)
E_INIT_MODES = ("zero", "paper_sparse")
INDICATOR_NORMS = ("sqrt", "paper")

SINGULAR_REG = 1e-10


class ConfigError(ValueError):
    pass


class NumericalError(RuntimeError):
    """The iteration produced non-finite values."""


@dataclass
class SolverConfig:
    lambda1: float = 2.0
    lambda2: float = 0.7
    beta: float = 0.2
    d: int = 2
    mu0: float = 1e-3
    mu_max: float = 1e6
    rho: float = 1.9
    eps1: float = 1e-3
    eps2: float = 1e-1
    xi: Optional[float] = None  # None: use the current mu
    tau: float = 1e-3
    max_iter: int = 200
    seed: int = 0
    u_update_mode: str = GRADIENT_CONSISTENT
    e_init_mode: str = "paper_sparse"
    s: int = 20
    indicator_norm: str = "sqrt"
    kmeans_restarts: int = 10

    def __post_init__(self):
        self.validate()

    def validate(self):
        for name in ("lambda1", "lambda2", "beta"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ConfigError(f"{name} must be finite and nonnegative, got {v}")
        if not (self.mu0 > 0 and self.mu0 < self.mu_max):
            raise ConfigError("need 0 < mu0 < mu_max")
        if not self.rho > 1:
            raise ConfigError("rho must exceed 1")
        if self.d < 2:
            raise ConfigError("d must be at least 2")
        if self.xi is not None and not self.xi > 0:
            raise ConfigError("xi must be positive")
        if self.tau < 0 or self.eps1 <= 0 or self.eps2 <= 0:
            raise ConfigError("tau must be nonnegative and eps1, eps2 positive")
        if self.max_iter < 1 or self.s < 1 or self.kmeans_restarts < 1:
            raise ConfigError("max_iter, s and kmeans_restarts must be positive")
        if self.u_update_mode not in U_UPDATE_MODES:
            raise ConfigError(f"u_update_mode must be one of {U_UPDATE_MODES}")
        if self.e_init_mode not in E_INIT_MODES:
            raise ConfigError(f"e_init_mode must be one of {E_INIT_MODES}")
        if self.indicator_norm not in INDICATOR_NORMS:
            raise ConfigError(f"indicator_norm must be one of {INDICATOR_NORMS}")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, values: dict) -> "SolverConfig":
        known = {f.name: f for f in dataclasses.fields(cls)}
        unknown = sorted(set(values) - set(known))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**{k: _coerce(known[k], v) for k, v in values.items()})

    @classmethod
    def from_file(cls, path, **overrides) -> "SolverConfig":
        """Read a flat ``key = value`` file; ``#`` starts a comment."""
        values = parse_config_text(Path(path).read_text(encoding="utf-8"))
        values.update(overrides)
        return cls.from_dict(values)

    def replace(self, **changes) -> "SolverConfig":
        return dataclasses.replace(self, **changes)


def parse_config_text(text: str) -> dict:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        values[key] = value
    unknown = sorted(set(values) - {f.name for f in dataclasses.fields(SolverConfig)})
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    return values


def _coerce(f: dataclasses.Field, value):
    if not isinstance(value, str):
        return value
    kind = f.type if isinstance(f.type, str) else getattr(f.type, "__name__", str(f.type))
    try:
        if "Optional" in kind:
            return None if value.lower() in ("none", "") else float(value)
        if kind == "int":
            return int(value)
        if kind == "float":
            return float(value)
    except ValueError:
        raise ConfigError(f"{f.name}: cannot parse {value!r} as {kind}") from None
    return value


@dataclass
class ViewState:
    X: np.ndarray  # d_i x n
    U: np.ndarray  # n x d
    D: np.ndarray  # d_i x d
    E: np.ndarray  # d_i x n
    G: np.ndarray  # n x d
    K1: np.ndarray  # d_i x n
    K2: np.ndarray  # n x d
    K3: np.ndarray  # d_i x d
    L: GraphLaplacian
    labels: np.ndarray
    gram: np.ndarray = None  # X^T X, cached
    U_raw: Optional[np.ndarray] = None  # last row-update output before reclustering
    converged: bool = False
    converged_at: Optional[int] = None

    def __post_init__(self):
        if self.gram is None:
            self.gram = self.X.T @ self.X

    def copy(self) -> "ViewState":
        arrays = {
            f.name: getattr(self, f.name).copy()
            for f in dataclasses.fields(self)
            if isinstance(getattr(self, f.name), np.ndarray) and f.name not in ("X", "gram")
        }
        return dataclasses.replace(self, **arrays)

    def residual(self) -> float:
        """Relative reconstruction residual |X - D U^T - E|_F / |X|_F."""
        return float(np.linalg.norm(self.X - self.D @ self.U.T - self.E) / np.linalg.norm(self.X))


# -- building blocks ---------------------------------------------------------


def indicator(labels, k: int, norm: str = "sqrt") -> np.ndarray:
    """Normalised cluster indicator: ``U[j, c] = 1/sqrt|C_c|`` (or ``1/|C_c|``) if j is in C_c."""
    labels = np.asarray(labels, dtype=np.int64)
    sizes = np.bincount(labels, minlength=k).astype(np.float64)
    if np.any(sizes == 0):
        raise ValueError("every cluster must be nonempty")
    weight = 1.0 / np.sqrt(sizes) if norm == "sqrt" else 1.0 / sizes
    U = np.zeros((labels.size, k))
    U[np.arange(labels.size), labels] = weight[labels]
    return U


def align_labels(labels, reference, k: int) -> np.ndarray:
    """Rename clusters of ``labels`` to maximise agreement with ``reference``."""
    labels = np.asarray(labels, dtype=np.int64)
    overlap = np.zeros((k, k), dtype=np.int64)
    np.add.at(overlap, (labels, np.asarray(reference, dtype=np.int64)), 1)
    assignment, _ = hungarian(-overlap)
    return assignment[labels]


def shrink(A, t: float):
    """Elementwise soft threshold ``sign(a) * max(|a| - t, 0)``."""
    if t < 0:
        raise ValueError("threshold must be nonnegative")
    A = np.asarray(A, dtype=np.float64)
    return np.sign(A) * np.maximum(np.abs(A) - t, 0.0)


def divergence(Us) -> float:
    """Pairwise disagreement ``sum_{i<j} |U_i - U_j|_F^2``."""
    total = 0.0
    for i in range(len(Us)):
        for j in range(i + 1, len(Us)):
            total += float(np.sum((Us[i] - Us[j]) ** 2))
    return total


def _other_sum(other_U, index: int) -> np.ndarray:
    return sum(U for j, U in enumerate(other_U) if j != index)


def laplacian_column_term(L: np.ndarray, lambda2: float) -> np.ndarray:
    """``sum_k 2 lambda2 L(k, l)`` for every column ``l``; zero up to rounding for a Laplacian."""
    return (2.0 * lambda2 * L).sum(axis=0)


def row_coefficients(state: ViewState, config: SolverConfig, mu: float, n_views: int):
    """Per-row scalar ``c_l`` and the weight on ``D^T D`` in the row systems
    ``U(l, .) (c_l I + w D^T D) = rhs_l``."""
    L = state.L.L
    if config.u_update_mode == FAITHFUL:
        c = 1.0 + mu + laplacian_column_term(L, config.lambda2) - mu * state.gram.sum(axis=0)
        return c, 1.0
    c = (
        1.0
        + config.beta * (n_views - 1)
        + mu
        + 2.0 * config.lambda2 * np.diag(L)
        - mu * np.diag(state.gram)
    )
    return c, mu


def row_rhs(state: ViewState, others: np.ndarray, config: SolverConfig, mu: float) -> np.ndarray:
    """Right-hand sides of all row systems (n x d), U-dependent terms from the current iterate."""
    s = state
    T = s.X.T @ s.K3 + mu * (s.G - s.E.T @ s.D) - s.K2
    if config.u_update_mode == FAITHFUL:
        return T - s.K1.T @ s.D + config.beta * others
    # off-diagonal parts of the Laplacian and Gram couplings, taken at the previous U
    lap = s.L.L @ s.U - np.diag(s.L.L)[:, None] * s.U
    gram = s.gram @ s.U - np.diag(s.gram)[:, None] * s.U
    return T + s.K1.T @ s.D + config.beta * others + mu * gram - 2.0 * config.lambda2 * lap


def _solve_rows(c, weight, DtD, rhs):
    lam = np.linalg.eigvalsh(DtD)
    gap = np.min(np.abs(c[:, None] + weight * lam[None, :]), axis=1)
    singular = gap < SINGULAR_REG
    if np.any(singular):
        log.warning("regularising %d singular row systems", int(singular.sum()))
        c = np.where(singular, c + SINGULAR_REG, c)
    d = DtD.shape[0]
    M = c[:, None, None] * np.eye(d)[None] + weight * DtD[None]
    return np.linalg.solve(M, rhs[..., None])[..., 0]


def update_U_row(state: ViewState, other_U, l: int, config: SolverConfig, mu: float, index: int = 0):
    """New row ``l`` of the view's factor.

    ``other_U`` is the snapshot of every view's factor (the view's own entry
    at ``index`` is ignored).
    """
    n_views = len(other_U)
    c, weight = row_coefficients(state, config, mu, n_views)
    rhs = row_rhs(state, _other_sum(other_U, index) if n_views > 1 else np.zeros_like(state.U), config, mu)
    return _solve_rows(c[l : l + 1], weight, state.D.T @ state.D, rhs[l : l + 1])[0]


def solve_U_rows(state: ViewState, other_U, config: SolverConfig, mu: float, index: int = 0):
    """All row updates at once; identical to calling :func:`update_U_row` per row."""
    n_views = len(other_U)
    c, weight = row_coefficients(state, config, mu, n_views)
    others = _other_sum(other_U, index) if n_views > 1 else np.zeros_like(state.U)
    return _solve_rows(c, weight, state.D.T @ state.D, row_rhs(state, others, config, mu))


def update_U(state: ViewState, other_U, config: SolverConfig, mu: float, index: int = 0, seed=0):
    """Row sweep followed by k-means reclustering of the rows into a normalised indicator.

    Cluster names are matched to the previous partition so the columns of
    ``U`` keep their meaning from one iteration to the next.
    """
    raw = solve_U_rows(state, other_U, config, mu, index)
    if not np.all(np.isfinite(raw)):
        raise NumericalError("row update produced non-finite values")
    labels = kmeans(raw, config.d, restarts=config.kmeans_restarts, seed=seed).labels.labels
    labels = align_labels(labels, state.labels, config.d)
    state.U_raw = raw
    state.labels = labels
    state.U = indicator(labels, config.d, config.indicator_norm)
    return state.U


def update_D(state: ViewState, mu: float) -> np.ndarray:
    """Closed-form minimiser ``D = (K1 U - K3 + mu (2X - E) U)(I + U^T U)^-1 / mu``."""
    s = state
    rhs = s.K1 @ s.U - s.K3 + mu * (2.0 * s.X - s.E) @ s.U
    A = np.eye(s.U.shape[1]) + s.U.T @ s.U
    s.D = np.linalg.solve(A, rhs.T).T / mu
    return s.D


def update_E(state: ViewState, config: SolverConfig, mu: float) -> np.ndarray:
    s = state
    s.E = shrink(s.X - s.D @ s.U.T + s.K1 / mu, config.lambda1 / mu)
    return s.E


def update_G(state: ViewState, mu: float) -> np.ndarray:
    """``G = max(0, U + K2/mu)``: the unconstrained minimiser projected onto G >= 0."""
    state.G = np.maximum(state.U + state.K2 / mu, 0.0)
    return state.G


def update_multipliers(state: ViewState, mu: float):
    s = state
    s.K1 = s.K1 + mu * (s.X - s.D @ s.U.T - s.E)
    s.K2 = s.K2 + mu * (s.U - s.G)
    s.K3 = s.K3 + mu * (s.D - s.X @ s.U)
    return s.K1, s.K2, s.K3


def update_mu(mu: float, progress: float, config: SolverConfig) -> float:
    """Grow mu geometrically (capped) once the change statistic is below eps2."""
    if progress < config.eps2:
        return min(config.mu_max, config.rho * mu)
    return mu


def change_statistic(state: ViewState, previous: ViewState, xi: float, mu: float) -> float:
    return max(
        xi * np.linalg.norm(state.U - previous.U),
        mu * np.linalg.norm(state.G - previous.G),
        mu * np.linalg.norm(state.E - previous.E),
    )


def check_convergence(state: ViewState, previous: ViewState, eps1: float, eps2: float, xi, mu: float) -> bool:
    """Both the relative residual and the scaled change statistic are below tolerance."""
    xi = mu if xi is None else xi
    return state.residual() < eps1 and change_statistic(state, previous, xi, mu) < eps2


# -- initialisation ------------------------------------------------------------


def initialize(dataset: MultiViewDataset, config: SolverConfig) -> list:
    """Graphs, Laplacians and indicator factors from per-view spectral clustering."""
    d = config.d
    if d > dataset.n:
        raise ValueError(f"d={d} exceeds the number of samples {dataset.n}")
    states = []
    reference = None
    for v in dataset.views:
        X = v.values
        g = build_graph(X, config.s)
        lap = laplacian(g)
        try:
            part = spectral_clustering(g.W, d, seed=[config.seed, 0], restarts=config.kmeans_restarts)
        except (ValueError, np.linalg.LinAlgError) as exc:
            if isinstance(exc, DegenerateViewError):
                raise
            log.warning("spectral initialisation failed on view %d (%s); using k-means", v.view_id, exc)
            part = kmeans(X.T, d, restarts=config.kmeans_restarts, seed=[config.seed, 0]).labels
        labels = part.labels
        if reference is None:
            reference = labels
        else:
            labels = align_labels(labels, reference, d)
        U = indicator(labels, d, config.indicator_norm)
        if config.e_init_mode == "paper_sparse":
            E = corrupt_matrix(np.zeros_like(X), 0.2, -5.0, 5.0, np.random.default_rng([config.seed, 2]))
        else:
            E = np.zeros_like(X)
        n, di = X.shape[1], X.shape[0]
        states.append(
            ViewState(
                X=X,
                U=U,
                D=X @ U,
                E=E,
                G=np.zeros((n, d)),
                K1=np.zeros((di, n)),
                K2=np.zeros((n, d)),
                K3=np.zeros((di, d)),
                L=lap,
                labels=labels,
            )
        )
    return states


# -- outer loop ------------------------------------------------------------------


@dataclass
class IterationRecord:
    iteration: int
    mu: float
    residuals: list
    divergence: float
    active: list
    statistics: list  # change statistic per view, None for frozen views
    u_raw_norms: list  # |U_raw|_F per view, None for frozen views
    U: Optional[list] = None


@dataclass
class SolveTrace:
    initial_residuals: list
    initial_divergence: float
    records: list = field(default_factory=list)
    converged: bool = False
    warning: Optional[str] = None

    @property
    def iterations(self) -> int:
        return len(self.records)

    @property
    def final_divergence(self) -> float:
        return self.records[-1].divergence if self.records else self.initial_divergence

    @property
    def final_residuals(self) -> list:
        return self.records[-1].residuals if self.records else self.initial_residuals

    def summary(self) -> dict:
        return {
            "iterations": self.iterations,
            "converged": self.converged,
            "warning": self.warning,
            "initial_residuals": list(self.initial_residuals),
            "final_residuals": list(self.final_residuals),
            "initial_divergence": self.initial_divergence,
            "final_divergence": self.final_divergence,
            "final_mu": self.records[-1].mu if self.records else None,
        }


def _step_view(state: ViewState, snapshot, index: int, config: SolverConfig, mu: float, seed):
    previous = state.copy()
    update_U(state, snapshot, config, mu, index=index, seed=seed)
    update_D(state, mu)
    update_E(state, config, mu)
    update_G(state, mu)
    update_multipliers(state, mu)
    xi = mu if config.xi is None else config.xi
    stat = change_statistic(state, previous, xi, mu)
    for name in ("U", "D", "E", "G", "K1", "K2", "K3"):
        if not np.all(np.isfinite(getattr(state, name))):
            raise NumericalError(f"{name} became non-finite")
    return state, stat


def solve(dataset: MultiViewDataset, config: SolverConfig, workers: int = 1, record_iterates: bool = False):
    """Run the alternating solver; returns ``(states, trace)``.

    Views whose residual and change statistic both fall below tolerance are
    frozen: they stop updating but keep feeding the agreement term of the
    remaining views. Per-view steps within an iteration only read the
    previous iteration's factors, so ``workers > 1`` gives identical results.
    """
    config.validate()
    min_dim = min(v.feature_dim for v in dataset.views)
    if config.d > min(dataset.n, min_dim):
        raise ValueError(f"d={config.d} exceeds min(n, feature dims)={min(dataset.n, min_dim)}")
    states = initialize(dataset, config)
    trace = SolveTrace(
        initial_residuals=[s.residual() for s in states],
        initial_divergence=divergence([s.U for s in states]),
    )
    mu = config.mu0
    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for k in range(config.max_iter):
            snapshot = [s.U.copy() for s in states]
            active = [i for i, s in enumerate(states) if not s.converged]
            seed = [config.seed, 1]
            jobs = [(states[i], snapshot, i, config, mu, seed) for i in active]
            if pool is not None:
                results = list(pool.map(lambda job: _step_view(*job), jobs))
            else:
                results = [_step_view(*job) for job in jobs]
            stats = [None] * len(states)
            for i, (_, stat) in zip(active, results):
                stats[i] = stat
            newly = [
                i for i in active
                if states[i].residual() < config.eps1 and stats[i] < config.eps2
            ]
            trace.records.append(
                IterationRecord(
                    iteration=k,
                    mu=mu,
                    residuals=[s.residual() for s in states],
                    divergence=divergence([s.U for s in states]),
                    active=active,
                    statistics=stats,
                    u_raw_norms=[
                        float(np.linalg.norm(states[i].U_raw)) if i in active else None
                        for i in range(len(states))
                    ],
                    U=[s.U.copy() for s in states] if record_iterates else None,
                )
            )
            for i in newly:
                states[i].converged = True
                states[i].converged_at = k
            mu = update_mu(mu, max(stats[i] for i in active), config)
            if all(s.converged for s in states):
                trace.converged = True
                break
    finally:
        if pool is not None:
            pool.shutdown()
    if not trace.converged:
        trace.warning = f"not converged after {config.max_iter} iterations; returning the last iterate"
        log.warning(trace.warning)
    return states, trace


def fit(dataset: MultiViewDataset, config: SolverConfig, workers: int = 1, record_iterates: bool = False):
    """Solve and return ``(factors, trace)`` with one ``n x d`` factor per view."""
    states, trace = solve(dataset, config, workers=workers, record_iterates=record_iterates)
    return [s.U for s in states], trace


def view_partitions(states) -> list:
    return [Partition(s.labels, s.U.shape[1]) for s in states]

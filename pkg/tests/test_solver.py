import numpy as np
import pytest

from mvlrr.data import MultiViewDataset, ViewMatrix, synth_multiview
from mvlrr.graph import build_graph, laplacian
from mvlrr.solver import (
    ConfigError,
    SolverConfig,
    ViewState,
    align_labels,
    check_convergence,
    divergence,
    indicator,
    initialize,
    laplacian_column_term,
    row_coefficients,
    shrink,
    solve,
    solve_U_rows,
    update_D,
    update_E,
    update_G,
    update_multipliers,
    update_mu,
    update_U_row,
)


def random_state(rng, di=4, n=6, d=2, scale=1.0):
    X = rng.standard_normal((di, n))
    W = rng.random((n, n))
    W = np.triu(W, 1) + np.triu(W, 1).T
    return ViewState(
        X=X,
        U=rng.standard_normal((n, d)),
        D=rng.standard_normal((di, d)),
        E=rng.standard_normal((di, n)) * scale,
        G=rng.random((n, d)),
        K1=rng.standard_normal((di, n)) * scale,
        K2=rng.standard_normal((n, d)) * scale,
        K3=rng.standard_normal((di, d)) * scale,
        L=laplacian(W),
        labels=np.arange(n) % d,
    )


def d_objective(s, D, mu):
    """Lagrangian terms that depend on D."""
    R = s.X - D @ s.U.T - s.E
    C = D - s.X @ s.U
    return np.sum(s.K1 * R) + mu / 2 * np.sum(R**2) + np.sum(s.K3 * C) + mu / 2 * np.sum(C**2)


def e_objective(s, E, lam1, mu):
    R = s.X - s.D @ s.U.T - E
    return lam1 * np.abs(E).sum() + np.sum(s.K1 * R) + mu / 2 * np.sum(R**2)


def u_potential(s, U, others, cfg, mu):
    """Quadratic whose stationarity in U defines the gradient-consistent row systems.

    Built term by term from the Lagrangian; the cross term with X of the data
    fit is replaced by -mu/2 Tr(U^T X^T X U) through the constraint D = XU.
    """
    v = 0.5 * np.sum(U**2)
    v += np.sum(s.K1 * (s.X - s.D @ U.T - s.E)) + mu / 2 * np.sum((s.E + s.D @ U.T) ** 2)
    v += np.sum(s.K2 * (U - s.G)) + mu / 2 * np.sum((U - s.G) ** 2)
    v += np.sum(s.K3 * (s.D - s.X @ U))
    v += cfg.lambda2 * np.trace(U.T @ s.L.L @ U)
    v += cfg.beta / 2 * sum(np.sum((U - Uj) ** 2) for Uj in others)
    v -= mu / 2 * np.sum((s.X @ U) ** 2)
    return v


def row_gradient(f, U, l):
    """Exact gradient of a quadratic ``f`` with respect to row ``l`` by unit central differences."""
    g = np.zeros(U.shape[1])
    for c in range(U.shape[1]):
        up, dn = U.copy(), U.copy()
        up[l, c] += 1.0
        dn[l, c] -= 1.0
        g[c] = (f(up) - f(dn)) / 2.0
    return g


def row_stationary_point(f, U, l):
    """Solve grad_l f(U with row l := u) = 0 for u, all other rows held at U."""
    d = U.shape[1]

    def grad_at(u):
        V = U.copy()
        V[l] = u
        return row_gradient(f, V, l)

    b = grad_at(np.zeros(d))
    A = np.column_stack([grad_at(np.eye(d)[c]) - b for c in range(d)])
    return np.linalg.solve(A, -b)


# -- elementwise operators -----------------------------------------------------


def test_shrink_examples():
    np.testing.assert_array_equal(shrink([3.0, -3.0, 0.5, -0.5], 1.0), [2.0, -2.0, 0.0, -0.0])
    A = np.random.default_rng(0).standard_normal((5, 5))
    np.testing.assert_array_equal(shrink(A, 0.0), A)
    with pytest.raises(ValueError):
        shrink(A, -1.0)


def test_indicator_columns_orthonormal():
    labels = np.array([0, 1, 1, 2, 2, 2, 0])
    U = indicator(labels, 3)
    np.testing.assert_allclose(U.T @ U, np.eye(3), atol=1e-15)
    P = indicator(labels, 3, "paper")
    np.testing.assert_allclose(P.sum(axis=0), [1, 1, 1])
    with pytest.raises(ValueError):
        indicator(np.array([0, 0]), 2)


def test_align_labels():
    ref = np.array([0, 0, 1, 1, 2])
    np.testing.assert_array_equal(align_labels(np.array([2, 2, 0, 0, 1]), ref, 3), ref)


def test_divergence():
    assert divergence([np.ones((2, 2)), np.zeros((2, 2)), np.zeros((2, 2))]) == 8.0


# -- closed-form blocks ------------------------------------------------------------


def test_update_D_recovers_XU_when_consistent():
    rng = np.random.default_rng(1)
    s = random_state(rng)
    s.K1[:] = 0
    s.K3[:] = 0
    s.U = indicator(np.array([0, 1, 0, 1, 0, 1]), 2)
    s.E = s.X - s.X @ s.U @ s.U.T  # so that X - XU U^T - E = 0
    np.testing.assert_allclose(update_D(s, 0.7), s.X @ s.U, atol=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_update_D_normal_equations(seed):
    rng = np.random.default_rng(seed)
    s = random_state(rng, di=5, n=7, d=3)
    mu = float(rng.uniform(0.1, 3.0))
    D = update_D(s, mu).copy()
    # dense vec form: mu (I_d + U^T U) kron I_di . vec(D) = vec(K1 U - K3 + mu (2X - E) U)
    di, d = D.shape
    A = mu * np.kron(np.eye(d) + s.U.T @ s.U, np.eye(di))
    rhs = (s.K1 @ s.U - s.K3 + mu * (2 * s.X - s.E) @ s.U).reshape(-1, order="F")
    np.testing.assert_allclose(D.reshape(-1, order="F"), np.linalg.solve(A, rhs), atol=1e-10)
    base = d_objective(s, D, mu)
    for _ in range(200):
        assert d_objective(s, D + 1e-3 * rng.standard_normal(D.shape), mu) >= base


@pytest.mark.parametrize("seed", range(5))
def test_update_E_beats_perturbations(seed):
    rng = np.random.default_rng(seed)
    s = random_state(rng)
    cfg = SolverConfig(lambda1=float(rng.uniform(0.1, 2)))
    mu = float(rng.uniform(0.2, 2.0))
    E = update_E(s, cfg, mu).copy()
    base = e_objective(s, E, cfg.lambda1, mu)
    for _ in range(200):
        assert e_objective(s, E + 1e-2 * rng.standard_normal(E.shape), cfg.lambda1, mu) >= base - 1e-12


def test_update_G_projection():
    rng = np.random.default_rng(2)
    s = random_state(rng)
    s.U = np.array([[1.0, -1.0]] * 6)
    s.K2 = np.zeros((6, 2))
    np.testing.assert_array_equal(update_G(s, 1.0), [[1.0, 0.0]] * 6)
    s.K2 = np.full((6, 2), 2.0)
    np.testing.assert_array_equal(update_G(s, 2.0), [[2.0, 0.0]] * 6)


def test_multiplier_updates():
    rng = np.random.default_rng(3)
    s = random_state(rng)
    K1, K2, K3 = s.K1.copy(), s.K2.copy(), s.K3.copy()
    mu = 0.4
    update_multipliers(s, mu)
    np.testing.assert_allclose(s.K1, K1 + mu * (s.X - s.D @ s.U.T - s.E))
    np.testing.assert_allclose(s.K2, K2 + mu * (s.U - s.G))
    np.testing.assert_allclose(s.K3, K3 + mu * (s.D - s.X @ s.U))
    # feasible point leaves the multipliers unchanged
    s.G = s.U.copy()
    before = s.K2.copy()
    update_multipliers(s, mu)
    np.testing.assert_array_equal(s.K2, before)


def test_mu_schedule():
    cfg = SolverConfig(rho=2.0, mu_max=5.0, eps2=0.1)
    assert update_mu(1.0, 0.05, cfg) == 2.0
    assert update_mu(1.0, 0.5, cfg) == 1.0
    assert update_mu(4.0, 0.0, cfg) == 5.0


def test_check_convergence():
    rng = np.random.default_rng(4)
    s = random_state(rng)
    s.E = s.X - s.D @ s.U.T
    prev = s.copy()
    assert check_convergence(s, prev, 1e-3, 0.1, None, 1.0)
    s.G = s.G + 1.0
    assert not check_convergence(s, prev, 1e-3, 0.1, None, 1.0)
    s.G = prev.G.copy()
    s.E = s.E + 1.0
    assert not check_convergence(s, prev, 1e-3, 0.1, None, 1.0)


# -- row systems -------------------------------------------------------------------


@pytest.mark.parametrize("seed", range(6))
def test_gradient_consistent_rows_are_stationary(seed):
    rng = np.random.default_rng(seed)
    s = random_state(rng, di=4, n=6, d=2)
    cfg = SolverConfig(lambda2=0.7, beta=0.2)
    mu = float(rng.uniform(0.05, 1.0))
    others = [rng.standard_normal(s.U.shape) for _ in range(2)]
    snapshot = [s.U, *others]

    def f(U):
        return u_potential(s, U, others, cfg, mu)

    batch = solve_U_rows(s, snapshot, cfg, mu, index=0)
    for l in range(6):
        expected = row_stationary_point(f, s.U, l)
        row = update_U_row(s, snapshot, l, cfg, mu, index=0)
        np.testing.assert_allclose(row, expected, rtol=1e-7, atol=1e-9)
        np.testing.assert_array_equal(row, batch[l])


def test_multiplier_K1_enters_with_the_gradient_sign():
    # isolating K1: the change in the row solution must match the derivative of <K1, X - D U^T - E>
    rng = np.random.default_rng(7)
    s = random_state(rng)
    cfg = SolverConfig(lambda2=0.0, beta=0.0)
    snapshot = [s.U]
    base = solve_U_rows(s, snapshot, cfg, 0.5)
    s.K1 = s.K1 + rng.standard_normal(s.K1.shape)

    def f(U):
        return u_potential(s, U, [], cfg, 0.5)

    moved = solve_U_rows(s, snapshot, cfg, 0.5)
    expected = np.array([row_stationary_point(f, s.U, l) for l in range(s.U.shape[0])])
    np.testing.assert_allclose(moved, expected, rtol=1e-7, atol=1e-9)
    assert np.max(np.abs(moved - base)) > 1e-3


def test_faithful_coefficients():
    rng = np.random.default_rng(8)
    s = random_state(rng, n=9)
    cfg = SolverConfig(u_update_mode="faithful", lambda2=5.0)
    assert np.all(np.abs(laplacian_column_term(s.L.L, cfg.lambda2)) < 1e-10)
    c, weight = row_coefficients(s, cfg, 0.3, 3)
    np.testing.assert_allclose(c, 1 + 0.3 - 0.3 * s.gram.sum(axis=0), atol=1e-10)
    assert weight == 1.0


# -- initialisation and the outer loop ---------------------------------------------


@pytest.fixture(scope="module")
def small_data():
    return synth_multiview(90, 3, [6, 8], separation=10, noise_std=0.1, seed=3)


def test_initialize(small_data):
    cfg = SolverConfig(d=3)
    states = initialize(small_data, cfg)
    for s in states:
        np.testing.assert_allclose(s.U.T @ s.U, np.eye(3), atol=1e-10)
        np.testing.assert_array_equal(s.D, s.X @ s.U)
        nz = np.count_nonzero(s.E)
        assert nz == int(0.2 * s.E.size)
        assert np.all(np.abs(s.E) <= 5)
        assert not s.G.any() and not s.K1.any() and not s.K2.any() and not s.K3.any()
    np.testing.assert_array_equal(states[0].labels, states[1].labels)
    zero = initialize(small_data, cfg.replace(e_init_mode="zero"))
    assert not any(s.E.any() for s in zero)


def test_single_view_converges():
    ds = synth_multiview(90, 3, [6], separation=10, noise_std=0.1, seed=1)
    states, trace = solve(ds, SolverConfig(d=3))
    assert trace.converged
    assert states[0].residual() < 1e-3


def test_identical_views_stay_identical(small_data):
    v = small_data.views[0]
    ds = MultiViewDataset((v, ViewMatrix(v.values.copy(), 1)), small_data.ground_truth)
    states, trace = solve(ds, SolverConfig(d=3, max_iter=40), record_iterates=True)
    assert trace.initial_divergence == 0.0
    for rec in trace.records:
        assert rec.divergence == 0.0
        assert rec.U[0].tobytes() == rec.U[1].tobytes()


def test_trace_invariants(small_data):
    states, trace = solve(small_data, SolverConfig(d=3), record_iterates=True)
    mus = [r.mu for r in trace.records]
    assert all(b >= a for a, b in zip(mus, mus[1:]))
    for i, s in enumerate(states):
        if s.converged_at is None:
            continue
        frozen = [r.U[i] for r in trace.records[s.converged_at :]]
        assert all(U.tobytes() == frozen[0].tobytes() for U in frozen)
        assert all(i not in r.active for r in trace.records[s.converged_at + 1 :])


def test_parallel_matches_sequential(small_data):
    cfg = SolverConfig(d=3, max_iter=30)
    a, ta = solve(small_data, cfg)
    b, tb = solve(small_data, cfg, workers=2)
    for x, y in zip(a, b):
        assert x.U.tobytes() == y.U.tobytes()
        assert x.E.tobytes() == y.E.tobytes()
    assert [r.residuals for r in ta.records] == [r.residuals for r in tb.records]


def test_non_convergence_returns_last_iterate(small_data):
    states, trace = solve(small_data, SolverConfig(d=3, max_iter=2))
    assert not trace.converged and trace.iterations == 2
    assert "not converged" in trace.warning


def test_rank_must_fit(small_data):
    with pytest.raises(ValueError):
        solve(small_data, SolverConfig(d=7))


# -- configuration -----------------------------------------------------------------


def test_config_file(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("# settings\nlambda1 = 1.5\nd=4  # clusters\nu_update_mode = faithful\nxi = none\n")
    cfg = SolverConfig.from_file(p, seed=9)
    assert (cfg.lambda1, cfg.d, cfg.u_update_mode, cfg.xi, cfg.seed) == (1.5, 4, "faithful", None, 9)
    p.write_text("lamda1 = 1\n")
    with pytest.raises(ConfigError, match="lamda1"):
        SolverConfig.from_file(p)


@pytest.mark.parametrize(
    "bad",
    [{"lambda1": -1.0}, {"rho": 1.0}, {"d": 1}, {"mu0": 2e6}, {"u_update_mode": "exact"}, {"eps1": 0.0}],
)
def test_config_validation(bad):
    with pytest.raises(ConfigError):
        SolverConfig(**bad)
    assert SolverConfig.from_dict(SolverConfig(d=3).to_dict()) == SolverConfig(d=3)

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import rk4_scalar_riccati
from scotkit import bridge
from scotkit.adjoint import backward_adjoint, solve_projected_gradient
from scotkit.control import rollout
from scotkit.controlsets import Box
from scotkit.tree import TreeTooLargeError


def _zeros(tree, N, m=1):
    return [np.zeros((tree.n_nodes[k], m)) for k in range(N)]


def _brownian(T=1.0, x0=0.0, c1=None):
    """``dx = dW`` (b = 0, sigma = 1), scalar."""
    return bridge.SdeProblem(
        T=T, n=1, m=1, d=1, x0=[x0],
        b=lambda t, X, U: np.zeros_like(X), sigma=lambda t, X, U: np.ones((len(X), 1, 1)),
        cost=lambda t, X, U: np.zeros(len(X)), terminal=lambda X: np.zeros(len(X)), c1=c1)


LQ = dict(T=1.0, x0=[1.0], A=0.5, B=1.0, Q=1.0, R=1.0, QT=1.0)


# -- discretization ----------------------------------------------------------------

def test_discretized_noise_scale():
    sp = _brownian()
    dp = bridge.discretize(sp, 4)
    X = np.zeros((3, 1))
    np.testing.assert_allclose(dp.sigma(0, X, np.zeros((3, 1))), 0.5)
    assert dp.meta["h"] == 0.25


@settings(max_examples=15)
@given(st.floats(0.1, 3.0), st.integers(1, 8))
def test_brownian_terminal_law(T, N):
    sp = _brownian(T)
    tree = bridge.bridge_tree(sp, N)
    xN = rollout(bridge.discretize(sp, N), _zeros(tree, N), tree)[N].values[:, 0]
    assert tree.prob[N] @ xN == pytest.approx(0.0, abs=1e-12)
    assert tree.prob[N] @ xN**2 == pytest.approx(T, rel=1e-12)


@pytest.mark.parametrize("lam", [0.7, -1.3])
def test_deterministic_euler(lam):
    prev = np.inf
    for N in (2, 4, 8, 16):
        sp = bridge.lq_sde(1.0, [2.0], lam, 1.0, 1.0, 1.0, 1.0)
        tree = bridge.bridge_tree(sp, N)
        xN = rollout(bridge.discretize(sp, N), _zeros(tree, N), tree)[N].values[:, 0]
        np.testing.assert_allclose(xN, 2.0 * (1 + lam / N) ** N, rtol=1e-13)
        err = abs(xN[0] - 2.0 * np.exp(lam))
        assert err < prev
        prev = err


def test_discretized_derivatives_are_scaled():
    sp = bridge.lq_sde(2.0, [1.0, 0.0], np.eye(2), [[1.0], [0.0]], np.eye(2), 1.0, np.eye(2),
                       C=[np.eye(2)])
    dp = bridge.discretize(sp, 8)
    X, U = np.ones((1, 2)), np.zeros((1, 1))
    np.testing.assert_allclose(dp.b_x(0, X, U)[0], np.eye(2) * 1.25)
    np.testing.assert_allclose(dp.sigma_x(0, X, U)[0][:, 0, :], np.eye(2) * 0.5)


def test_node_budget():
    with pytest.raises(TreeTooLargeError):
        bridge.bridge_tree(_brownian(), 18)


def test_bad_horizon():
    with pytest.raises(ValueError):
        _brownian(T=0.0)


# -- Riccati oracle -----------------------------------------------------------------

def test_riccati_matches_rk4():
    sp = bridge.lq_sde(**LQ, C=[[[0.4]]])
    ric = bridge.riccati_oracle(sp)
    t, P = rk4_scalar_riccati(0.5, 1.0, 0.4, 1.0, 1.0, 1.0, 1.0, 20000)
    for tk in (0.0, 0.25, 0.5, 0.9, 1.0):
        j = int(round(tk * 20000))
        assert ric.at(tk)[0][0, 0] == pytest.approx(P[j], abs=1e-8)


def test_riccati_rejects_affine_feedback():
    sp = bridge.lq_sde(**LQ, D=[[[0.2]]], s=[[0.3]])
    with pytest.raises(ValueError, match="affine"):
        bridge.riccati_oracle(sp)


# -- adjoint scaling ----------------------------------------------------------------

def _solved(sp, N, tol=1e-10):
    tree = bridge.bridge_tree(sp, N)
    dp = bridge.discretize(sp, N)
    res = solve_projected_gradient(dp, _zeros(tree, N, sp.m), tree, metric=sp.T / N, tol=tol)
    assert res.converged
    x = rollout(dp, res.u, tree)
    return tree, res, x, backward_adjoint(dp, x, res.u, tree)


def test_continuous_q_convention():
    sp = bridge.lq_sde(**LQ, s=[[0.3]])
    tree, res, x, adj = _solved(sp, 4)
    p, q = bridge.continuous_adjoint(adj, 0.25)
    for k in range(4):
        np.testing.assert_array_equal(p[k], adj.p[k].values)
        np.testing.assert_allclose(q[k], adj.q[k].values / 0.5, rtol=1e-15)


def test_costate_approaches_riccati():
    sp = bridge.lq_sde(**LQ, s=[[0.3]])
    ric = bridge.riccati_oracle(sp)
    errs_p, errs_q = [], []
    for N in (4, 8, 16):
        h = 1.0 / N
        tree, res, x, adj = _solved(sp, N)
        p, q = bridge.continuous_adjoint(adj, h)
        Pk = [ric.at(k * h)[0][0, 0] for k in range(N)]
        # p(t) ~ P(t) x(t) and q(t) ~ P(t) sigma in L2(P) over the grid
        errs_p.append(np.sqrt(sum(h * tree.prob[k] @ (p[k][:, 0] - Pk[k] * x[k].values[:, 0]) ** 2
                                  for k in range(N))))
        errs_q.append(max(np.abs(q[k][:, 0, 0] - Pk[k] * 0.3).max() for k in range(N)))
    for errs in (errs_p, errs_q):
        assert errs[0] / errs[1] >= 1.8 and errs[1] / errs[2] >= 1.8
    assert errs_p[-1] <= 1.0 / 16 and errs_q[-1] <= 0.5 / 16


# -- moment bound -----------------------------------------------------------------------

def test_moment_constant_formula():
    assert bridge.moment_constant(1.0, 0.0, 1) == 24.0
    assert bridge.moment_constant(5.0, 0.0, 1) == 30.0
    assert bridge.moment_constant(1.0, 1.0, 1) == pytest.approx(24 * np.exp(24))
    assert bridge.moment_constant(100.0, 10.0, 3) == np.inf


def test_moment_bound_trivial_dynamics():
    sp = bridge.lq_sde(1.0, [1.5], 0.0, 0.0, 1.0, 1.0, 1.0)
    rep = bridge.verify_moment_bound(sp, 4)
    for row in rep["checks"]:
        assert row["lhs"] == pytest.approx(2.25)
        assert row["base"] == pytest.approx(2.25)
    assert rep["passed"]


def test_moment_bound_brownian():
    rep = bridge.verify_moment_bound(_brownian(x0=1.0, c1=1.0), 8)
    assert rep["constant"] == pytest.approx(24 * np.exp(24))
    assert rep["passed"]
    assert all(r["base"] == pytest.approx(2.0) for r in rep["checks"])


def test_moment_bound_needs_c1():
    with pytest.raises(ValueError):
        bridge.verify_moment_bound(_brownian(), 2)


def test_moment_bound_random_instances():
    rng = np.random.default_rng(2024)
    for i in range(100):
        n, d = int(rng.integers(1, 3)), int(rng.integers(1, 3))
        N = int(rng.integers(1, 5 if d == 1 else 4))
        sp = bridge.catalog_nonlinear_sde(
            float(rng.uniform(0.2, 2.0)), rng.normal(size=n), rng.normal(size=(n, n)),
            rng.normal(size=(n, 1)), np.eye(n), 1.0, np.eye(n),
            C=rng.normal(size=(d, n, n)) * 0.5, s=rng.normal(size=(d, n)))
        rep = bridge.verify_moment_bound(sp, N, seed=i)
        assert rep["passed"], (i, rep)


# -- weak PMP ---------------------------------------------------------------------------

def test_weak_pmp_stationarity_halves_at_riccati_feedback():
    sp = bridge.lq_sde(**LQ, s=[[0.3]])
    ric = bridge.riccati_oracle(sp)
    vals = []
    for N in (4, 8, 16):
        tree = bridge.bridge_tree(sp, N)
        rep = bridge.weak_pmp_check(sp, N, bridge.riccati_controls(sp, N, tree, ric), tree)
        assert rep["adjoint_residual"] <= 1e-12
        vals.append(rep["stationarity_continuous"])
    assert vals[0] / vals[1] >= 1.8 and vals[1] / vals[2] >= 1.8


def test_weak_pmp_degenerate_control():
    # drift and diffusion ignore u and the cost does not see it
    sp = bridge.SdeProblem(
        T=1.0, n=1, m=1, d=1, x0=[1.0],
        b=lambda t, X, U: -X, sigma=lambda t, X, U: 0.5 * X[:, :, None],
        cost=lambda t, X, U: X[:, 0] ** 2, terminal=lambda X: X[:, 0] ** 2,
        b_u=lambda t, X, U: np.zeros((len(X), 1, 1)),
        sigma_u=lambda t, X, U: np.zeros((len(X), 1, 1, 1)),
        cost_u=lambda t, X, U: np.zeros_like(U))
    tree = bridge.bridge_tree(sp, 5)
    u = [np.random.default_rng(k).normal(size=(tree.n_nodes[k], 1)) for k in range(5)]
    rep = bridge.weak_pmp_check(sp, 5, u, tree)
    assert rep["stationarity"] == 0.0


def test_weak_pmp_box_constrained_lq():
    sp = bridge.lq_sde(**LQ, s=[[0.3]], controls=Box([-0.4], [0.4]))
    tree, res, x, adj = _solved(sp, 6, tol=1e-9)
    U = np.concatenate([u.values[:, 0] for u in res.u])
    assert np.any(np.isclose(np.abs(U), 0.4))
    rep = bridge.weak_pmp_check(sp, 6, res.u, tree)
    assert rep["stationarity"] <= 1e-9
    assert "sqrt(h)" in rep["convention"]

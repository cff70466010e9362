import numpy as np
import pytest
from hypothesis import given, strategies as st

from scotkit.adjoint import (AdjointError, InfeasibleControl, backward_adjoint, hamiltonian,
                             initial_multiplier, inner, kkt_residual, reduced_gradient,
                             solve_projected_gradient)
from scotkit.control import ControlProblem, cost, linearize_g, rollout
from scotkit.controlsets import Box
from scotkit.families import linear_quadratic, random_linear
from scotkit.regularity.sets import Ball as SetBall, Box as SetBox
from scotkit.tree import AdaptedProcess

from helpers import catalog, rad_tree, random_controls, scalar_problem
from oracles import dense_lq_kkt, discrete_riccati_gains, split_children


def zeros_u(p, tree):
    return [np.zeros((tree.n_nodes[k], p.m)) for k in range(p.N)]


def riccati_rollout(p, tree, A, B, C, D, Q, R, QN):
    gains = discrete_riccati_gains(A, B, C, D, Q, R, QN, p.N)
    x = [p.x0[None]]
    u = []
    for k in range(p.N):
        uk = -x[k] @ gains[k].T
        u.append(uk)
        par = tree.parent_index(k + 1)
        w = tree.noise[k + 1]
        drift = x[k] @ A.T + uk @ B.T
        diff = sum(w[:, i:i + 1] * (x[k] @ C[i].T + uk @ D[i].T)[par] for i in range(p.d))
        x.append(drift[par] + diff)
    return u


class TestHamiltonian:
    def test_examples(self):
        p = ControlProblem(N=1, n=2, m=1, d=1, x0=[0, 0], b=lambda k, X, U: X,
                           sigma=lambda k, X, U: np.zeros(X.shape + (1,)),
                           cost=lambda k, X, U: np.zeros(len(X)), terminal=lambda X: np.zeros(len(X)))
        assert hamiltonian(p, 0, np.array([5.0, 7.0]), np.array([1.0, 0.0]), np.zeros((1, 2)),
                           np.zeros(1)) == pytest.approx(5.0)
        p = scalar_problem(1, lambda x, u: 0 * x, lambda x, u: u, cost=lambda x, u: 0 * x + 1)
        assert hamiltonian(p, 0, np.array([0.0]), np.array([0.0]), np.array([[3.0]]),
                           np.array([2.0])) == pytest.approx(7.0)

    def test_against_scalar_loop(self):
        p = catalog(N=1, n=2, m=2, d=2, seed=4)
        rng = np.random.default_rng(0)
        for _ in range(5):
            x, pk, u = rng.normal(size=2), rng.normal(size=2), rng.normal(size=2)
            qk = rng.normal(size=(2, 2))
            X, U = x[None], u[None]
            b = p.b(0, X, U)[0]
            s = p.sigma(0, X, U)[0]  # (n, d)
            ref = p.cost(0, X, U)[0] + sum(pk[i] * b[i] for i in range(2)) + \
                sum(qk[j, i] * s[i, j] for i in range(2) for j in range(2))
            assert hamiltonian(p, 0, x, pk, qk, u) == pytest.approx(ref, rel=1e-13)


class TestAdjoint:
    def test_linear_terminal(self):
        p = scalar_problem(1, lambda x, u: x + u, lambda x, u: 0 * x + 1, terminal=lambda x: x,
                           terminal_x=lambda X: np.ones_like(X))
        t = rad_tree(1)
        u = zeros_u(p, t)
        adj = backward_adjoint(p, rollout(p, u, t), u, t)
        assert adj.p[0].values[0, 0] == pytest.approx(1.0)
        assert adj.q[0].values[0, 0, 0] == pytest.approx(0.0)

    def test_quadratic_terminal(self):
        p = scalar_problem(1, lambda x, u: x + u, lambda x, u: 0 * x + 1, terminal=lambda x: 0.5 * x**2,
                           terminal_x=lambda X: X, x0=0.0)
        t = rad_tree(1)
        u = zeros_u(p, t)
        x = rollout(p, u, t)
        np.testing.assert_allclose(x[1].values[:, 0], [1.0, -1.0])
        adj = backward_adjoint(p, x, u, t)
        assert adj.p[0].values[0, 0] == pytest.approx(0.0)
        assert adj.q[0].values[0, 0, 0] == pytest.approx(1.0)

    @pytest.mark.parametrize("seed", range(5))
    def test_dense_kkt_oracle(self, seed):
        rng = np.random.default_rng(seed)
        n, m, N = 2, 1, 2
        A, B = rng.normal(size=(n, n)), rng.normal(size=(n, m))
        C, D = 0.5 * rng.normal(size=(n, n)), 0.5 * rng.normal(size=(n, m))
        Q, R, QN, x0 = np.eye(n), np.eye(m), 2 * np.eye(n), rng.normal(size=n)
        x, u, lam = dense_lq_kkt(A, B, C, D, Q, R, QN, x0, N)
        p = linear_quadratic(N, n, m, 1, x0, A, B, Q, R, QN, C=[C], D=[D])
        t = rad_tree(N)
        adj = backward_adjoint(p, rollout(p, u, t), u, t)
        for k in range(N):
            pk, qk = split_children(lam[k + 1])
            assert np.abs(pk - adj.p[k].values).max() <= 1e-10
            assert np.abs(qk - adj.q[k].values[:, 0]).max() <= 1e-10
            np.testing.assert_allclose(adj.multiplier(k).values, lam[k + 1], atol=1e-10)

    def test_rollout_mismatch(self):
        p, t = catalog(N=2), rad_tree(2)
        u = zeros_u(p, t)
        x = [xk.values.copy() for xk in rollout(p, u, t)]
        x[2][3] += 1.0
        with pytest.raises(AdjointError, match="stage 2, node 6"):
            backward_adjoint(p, x, u, t)

    @given(st.integers(0, 2**31 - 1))
    def test_stationarity_in_x(self, seed):
        # D_{x_k} f + sum_j <lambda_j, D_{x_k} g_j> = 0 for k >= 1, with lambda_j = p_{j-1} + q w
        rng = np.random.default_rng(seed)
        p, t = catalog(N=3, seed=seed % 7), rad_tree(3)
        u = random_controls(p, t, rng)
        x = rollout(p, u, t)
        adj = backward_adjoint(p, x, u, t)
        from scotkit.control import eval_cost_and_gradient
        cg = eval_cost_and_gradient(p, x, u, t)
        for k in range(1, p.N + 1):
            z = [np.zeros_like(xk.values) for xk in x]
            z[k] = rng.normal(size=z[k].shape)
            dg = linearize_g(p, x, u, t, z, zeros_u(p, t))
            lhs = float(t.prob[k] @ np.sum(cg.grad_x[k].values * z[k], axis=1))
            for j in range(1, p.N + 1):
                lam = adj.multiplier(j - 1).values
                lhs += float(t.prob[j] @ np.sum(lam * dg[j].values, axis=1))
            assert abs(lhs) <= 1e-10 * (1 + np.abs(z[k]).max())


class TestGradient:
    def test_control_only_cost(self):
        p = scalar_problem(3, lambda x, u: x, lambda x, u: 0 * x + 0.3, cost=lambda x, u: 0.5 * u**2,
                           cost_u=lambda k, X, U: U)
        t = rad_tree(3)
        u = random_controls(p, t, np.random.default_rng(0))
        for g, uk in zip(reduced_gradient(p, u, t), u):
            np.testing.assert_allclose(g.values, uk, atol=1e-12)

    def test_finite_differences(self):
        p, t = catalog(N=3, m=2), rad_tree(3)
        rng = np.random.default_rng(11)
        u = random_controls(p, t, rng)
        grad = reduced_gradient(p, u, t)
        tau = 1e-5
        for _ in range(20):
            v = random_controls(p, t, rng)
            fd = (cost(p, [a + tau * b for a, b in zip(u, v)], t)
                  - cost(p, [a - tau * b for a, b in zip(u, v)], t)) / (2 * tau)
            an = inner(grad, [AdaptedProcess(t, k, v[k]) for k in range(p.N)])
            assert abs(fd - an) <= 1e-6 * abs(an)

    def test_zero_at_riccati_optimum(self):
        rng = np.random.default_rng(3)
        n, m, N = 2, 1, 4
        A, B = rng.normal(size=(n, n)), rng.normal(size=(n, m))
        Q, R, QN = np.eye(n), np.eye(m), np.eye(n)
        p = linear_quadratic(N, n, m, 1, rng.normal(size=n), A, B, Q, R, QN)
        t = rad_tree(N)
        u = riccati_rollout(p, t, A, B, [np.zeros((n, n))], [np.zeros((n, m))], Q, R, QN)
        g = reduced_gradient(p, u, t)
        assert np.sqrt(sum(gk.sq_norm() for gk in g)) <= 1e-8


class TestKKT:
    def test_stationary(self):
        rng = np.random.default_rng(8)
        n, m, N = 2, 2, 3
        A, B = rng.normal(size=(n, n)), rng.normal(size=(n, m))
        C, D = [0.3 * rng.normal(size=(n, n))], [0.3 * rng.normal(size=(n, m))]
        Q, R, QN = np.eye(n), np.eye(m), np.eye(n)
        p = linear_quadratic(N, n, m, 1, rng.normal(size=n), A, B, Q, R, QN, C=C, D=D)
        t = rad_tree(N)
        rep = kkt_residual(p, riccati_rollout(p, t, A, B, C, D, Q, R, QN), t)
        assert rep.aggregate <= 1e-8 and rep.passed()

    def _box_problem(self, grad_value):
        # H_u = l_u = grad_value at every node (cost linear in u, dynamics free of u)
        return scalar_problem(1, lambda x, u: x, lambda x, u: 0 * x,
                              cost=lambda x, u: grad_value * u,
                              cost_u=lambda k, X, U: np.full_like(U, grad_value),
                              controls=Box([-1.0], [1.0]))

    def test_box_clip(self):
        t = rad_tree(1)
        rep = kkt_residual(self._box_problem(2.0), [np.array([[-1.0]])], t)
        assert rep.node_residuals[0][0] == 0.0
        rep = kkt_residual(self._box_problem(-2.0), [np.array([[0.0]])], t)
        assert rep.node_residuals[0][0] == pytest.approx(2.0)

    def test_infeasible(self):
        with pytest.raises(InfeasibleControl, match="stage 0, node 0"):
            kkt_residual(self._box_problem(1.0), [np.array([[3.0]])], rad_tree(1))

    def test_transversality(self):
        # x0 on the unit circle: N(x0) is the outward ray, residual = d(-lambda_0, ray)
        base = random_linear(np.random.default_rng(2), 2, 2, 1, 1)
        p = random_linear(np.random.default_rng(2), 2, 2, 1, 1, initial_set=SetBall([0.0, 0.0], 1.0))
        p = p.with_x0([1.0, 0.0])
        t = rad_tree(2)
        u = zeros_u(p, t)
        x = rollout(p, u, t)
        lam0 = initial_multiplier(p, x, u, backward_adjoint(p, x, u, t))
        v = -lam0
        expect = abs(v[1]) if v[0] >= 0 else np.linalg.norm(v)
        assert kkt_residual(p, u, t).transversality == pytest.approx(expect, rel=1e-9, abs=1e-12)
        # interior point of a box: the normal cone is {0}
        p2 = random_linear(np.random.default_rng(2), 2, 2, 1, 1,
                           initial_set=SetBox([-10.0, -10.0], [10.0, 10.0]))
        x2 = rollout(p2, u, t)
        lam2 = initial_multiplier(p2, x2, u, backward_adjoint(p2, x2, u, t))
        assert kkt_residual(p2, u, t).transversality == pytest.approx(np.linalg.norm(lam2), rel=1e-9)
        assert kkt_residual(base, u, t).transversality is None


class TestSolver:
    def test_lq_matches_riccati(self):
        rng = np.random.default_rng(4)
        n, m, N = 2, 1, 4
        A, B = 0.8 * rng.normal(size=(n, n)), rng.normal(size=(n, m))
        Q, R, QN = np.eye(n), np.eye(m), np.eye(n)
        p = linear_quadratic(N, n, m, 1, rng.normal(size=n), A, B, Q, R, QN)
        t = rad_tree(N)
        res = solve_projected_gradient(p, zeros_u(p, t), t, tol=1e-10, max_iter=2000)
        ref = riccati_rollout(p, t, A, B, [np.zeros((n, n))], [np.zeros((n, m))], Q, R, QN)
        err = np.sqrt(sum(float(t.prob[k] @ np.sum((res.u[k].values - ref[k]) ** 2, axis=1))
                          for k in range(N)))
        assert res.converged and err <= 1e-6

    def test_convex_linear_rate(self):
        p, t = random_linear(np.random.default_rng(5), 3, 2, 2, 1), rad_tree(3)
        res = solve_projected_gradient(p, zeros_u(p, t), t, tol=1e-8)
        assert res.converged and res.report.aggregate <= 1e-8
        kkt = np.array([h["kkt"] for h in res.history])
        J = np.array([h["J"] for h in res.history])
        assert np.all(np.diff(J) <= 1e-12 * np.abs(J[:-1]) + 1e-14)
        # geometric decrease: average contraction per iteration below one
        assert (kkt[-1] / kkt[0]) ** (1 / (len(kkt) - 1)) < 0.95

    def test_active_box(self):
        # unconstrained optimum pushes u far outside [-0.1, 0.1]
        rng = np.random.default_rng(6)
        p = linear_quadratic(3, 1, 1, 1, [3.0], [[1.0]], [[1.0]], [[1.0]], [[0.1]], [[1.0]],
                             C=[[[0.2]]], controls=Box([-0.1], [0.1]))
        t = rad_tree(3)
        u0 = [np.clip(uk, -0.1, 0.1) for uk in random_controls(p, t, rng, 0.05)]
        res = solve_projected_gradient(p, u0, t, tol=1e-8)
        assert res.converged and res.report.aggregate <= 1e-8
        grad = reduced_gradient(p, res.u, t)
        assert np.sqrt(sum(g.sq_norm() for g in grad)) > 0.1
        for uk in res.u:
            assert np.all(np.abs(uk.values) <= 0.1 + 1e-12)

    def test_log(self, tmp_path):
        p, t = random_linear(np.random.default_rng(7), 2, 1, 1, 1), rad_tree(2)
        path = tmp_path / "log.csv"
        solve_projected_gradient(p, zeros_u(p, t), t, log_path=path)
        lines = path.read_text().splitlines()
        assert lines[0] == "iter,J,step,kkt" and len(lines) > 2

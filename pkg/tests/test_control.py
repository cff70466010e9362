import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from scotkit.control import (BoundWarning, DynamicsError, check_bounds, cost, eval_cost_and_gradient,
                             linearize_g, residual_g, right_inverse_constants, rollout,
                             solve_right_inverse)
from scotkit.controlsets import Ball, Box, BoxUnion
from scotkit.families import random_linear
from scotkit.stage import NotInStageSpace
from scotkit.tree import AdaptedProcess

from helpers import catalog, rad_tree, random_controls, scalar_problem


def zeros_u(p, tree):
    return [np.zeros((tree.n_nodes[k], p.m)) for k in range(p.N)]


class TestRollout:
    def test_fixed_point(self):
        p = scalar_problem(3, lambda x, u: x + u, lambda x, u: 0 * x)
        t = rad_tree(3)
        x = rollout(p, zeros_u(p, t), t)
        for xk in x:
            np.testing.assert_allclose(xk.values, 1.0)

    def test_pure_noise(self):
        p = scalar_problem(1, lambda x, u: 0 * x, lambda x, u: 0 * x + 1, x0=0.0)
        t = rad_tree(1)
        np.testing.assert_allclose(rollout(p, zeros_u(p, t), t)[1].values[:, 0], [1.0, -1.0])

    def test_doubling(self):
        t = rad_tree(3)
        p = scalar_problem(3, lambda x, u: x, lambda x, u: 0 * x)
        np.testing.assert_allclose(rollout(p, zeros_u(p, t), t)[3].values, 1.0)
        p = scalar_problem(3, lambda x, u: 2 * x, lambda x, u: 0 * x)
        np.testing.assert_allclose(rollout(p, zeros_u(p, t), t)[3].values, 8.0)

    def test_nonfinite_reports_node(self):
        p = scalar_problem(2, lambda x, u: np.where(x > 1.5, np.inf, x + 1), lambda x, u: 0 * x)
        t = rad_tree(2)
        with pytest.raises(DynamicsError, match="stage 1"):
            rollout(p, zeros_u(p, t), t)


class TestResidual:
    def test_zero_at_rollout(self):
        p, t = catalog(), rad_tree(3)
        u = random_controls(p, t, np.random.default_rng(0))
        for r in residual_g(p, rollout(p, u, t), u, t):
            assert r.norm <= 1e-12

    def test_only_initial(self):
        p = scalar_problem(2, lambda x, u: 0 * x, lambda x, u: 0 * x)
        t = rad_tree(2)
        x = [np.zeros((t.n_nodes[k], 1)) for k in range(3)]
        res = residual_g(p, x, zeros_u(p, t), t)
        assert res[0].norm == pytest.approx(1.0)
        assert res[1].norm == 0.0 and res[2].norm == 0.0

    def test_perturbation_locality(self):
        p = scalar_problem(3, lambda x, u: x + u, lambda x, u: 0.5 * x)
        t = rad_tree(3)
        u = zeros_u(p, t)
        x = [xk.values.copy() for xk in rollout(p, u, t)]
        eps = 1e-3
        x[2] = x[2] + eps
        res = residual_g(p, x, u, t)
        assert res[2].norm == pytest.approx(eps, rel=1e-10)
        assert res[0].norm == 0.0 and res[1].norm == 0.0
        assert res[3].norm > 0.0


class TestLinearize:
    def test_linear_case(self):
        p = scalar_problem(2, lambda x, u: 3 * x, lambda x, u: 0 * x)
        t = rad_tree(2)
        rng = np.random.default_rng(1)
        z = [rng.normal(size=(t.n_nodes[k], 1)) for k in range(3)]
        out = linearize_g(p, rollout(p, zeros_u(p, t), t), zeros_u(p, t), t, z, zeros_u(p, t))
        np.testing.assert_allclose(out[0].values, -z[0])
        for k in range(2):
            par = t.parent_index(k + 1)
            np.testing.assert_allclose(out[k + 1].values, 3 * z[k][par] - z[k + 1], atol=1e-12)

    def test_zero_derivatives(self):
        p = scalar_problem(2, lambda x, u: 0 * x + 1, lambda x, u: 0 * x + 2)
        t = rad_tree(2)
        z = [np.ones((t.n_nodes[k], 1)) * (k + 1) for k in range(3)]
        out = linearize_g(p, rollout(p, zeros_u(p, t), t), zeros_u(p, t), t, z, zeros_u(p, t))
        for k in range(3):
            np.testing.assert_allclose(out[k].values, -z[k], atol=1e-9)

    def test_finite_difference(self):
        p, t = catalog(), rad_tree(3)
        rng = np.random.default_rng(2)
        u = random_controls(p, t, rng)
        x = [xk.values for xk in rollout(p, u, t)]
        z = [rng.normal(size=xk.shape) for xk in x]
        v = random_controls(p, t, rng)
        tau = 1e-5
        gp = residual_g(p, [a + tau * b for a, b in zip(x, z)], [a + tau * b for a, b in zip(u, v)], t)
        gm = residual_g(p, [a - tau * b for a, b in zip(x, z)], [a - tau * b for a, b in zip(u, v)], t)
        lin = linearize_g(p, x, u, t, z, v)
        for a, b, c in zip(gp, gm, lin):
            fd = (a.values.values - b.values.values) / (2 * tau)
            assert np.linalg.norm(fd - c.values) <= 1e-6 * np.linalg.norm(c.values)

    @given(st.integers(0, 2**31 - 1), st.floats(-3, 3))
    def test_linearity(self, seed, s):
        p, t = catalog(N=2, seed=3), rad_tree(2)
        rng = np.random.default_rng(seed)
        u = random_controls(p, t, rng)
        x = rollout(p, u, t)
        z1 = [rng.normal(size=xk.values.shape) for xk in x]
        z2 = [rng.normal(size=xk.values.shape) for xk in x]
        v1, v2 = random_controls(p, t, rng), random_controls(p, t, rng)
        L = lambda z, v: [o.values for o in linearize_g(p, x, u, t, z, v)]  # noqa: E731
        lhs = L([a + s * b for a, b in zip(z1, z2)], [a + s * b for a, b in zip(v1, v2)])
        rhs = [a + s * b for a, b in zip(L(z1, v1), L(z2, v2))]
        for a, b in zip(lhs, rhs):
            np.testing.assert_allclose(a, b, atol=1e-12 * (1 + np.abs(b).max()))


class TestRightInverse:
    def test_zero_derivatives(self):
        p = scalar_problem(2, lambda x, u: 0 * x, lambda x, u: 0 * x)
        t = rad_tree(2)
        delta = [t.constant(0, [1.0]), t.constant(1, [2.0]), t.constant(2, [3.0])]
        z = solve_right_inverse(p, rollout(p, zeros_u(p, t), t), zeros_u(p, t), t, delta)
        for k in range(3):
            np.testing.assert_allclose(z[k].values, -delta[k].values)

    def test_hand_recursion(self):
        p = scalar_problem(2, lambda x, u: 2 * x, lambda x, u: 0 * x)
        t = rad_tree(2)
        delta = [t.constant(0, [1.0]), t.zeros(1, (1,)), t.zeros(2, (1,))]
        z = solve_right_inverse(p, rollout(p, zeros_u(p, t), t), zeros_u(p, t), t, delta)
        assert z[0].values[0, 0] == pytest.approx(-1.0)
        np.testing.assert_allclose(z[1].values, -2.0)
        np.testing.assert_allclose(z[2].values, -4.0)

    def test_rejects_non_member(self):
        p = random_linear(np.random.default_rng(0), 1, 1, 1, 2)
        t = rad_tree(1, 2)
        w1, w2 = t.noise_process(1, 1), t.noise_process(1, 2)
        delta = [t.zeros(0, (1,)), AdaptedProcess(t, 1, (w1 * w2).values[:, None])]
        with pytest.raises(NotInStageSpace):
            solve_right_inverse(p, rollout(p, zeros_u(p, t), t), zeros_u(p, t), t, delta)

    def test_constants(self):
        cbar, bound = right_inverse_constants(2, 1, 1.0)
        assert cbar == 18.0 and bound == 3 * 18.0**3


class TestCost:
    def test_terminal_mean(self):
        p = scalar_problem(2, lambda x, u: x + u, lambda x, u: 0 * x + 1, terminal=lambda x: x,
                           terminal_x=lambda X: np.ones_like(X))
        t = rad_tree(2)
        u = zeros_u(p, t)
        x = rollout(p, u, t)
        cg = eval_cost_and_gradient(p, x, u, t)
        assert cg.J == pytest.approx(float(t.prob[2] @ x[2].values[:, 0]))
        np.testing.assert_allclose(cg.grad_x[2].values, 1.0)

    def test_quadratic_control(self):
        p = scalar_problem(3, lambda x, u: x, lambda x, u: 0 * x, cost=lambda x, u: 0.5 * u**2,
                           cost_u=lambda k, X, U: U)
        t = rad_tree(3)
        u = [np.full((t.n_nodes[k], 1), 0.7) for k in range(3)]
        cg = eval_cost_and_gradient(p, rollout(p, u, t), u, t)
        assert cg.J == pytest.approx(3 * 0.5 * 0.49)
        for g in cg.grad_u:
            np.testing.assert_allclose(g.values, 0.7)

    def test_finite_difference(self):
        p, t = catalog(), rad_tree(3)
        rng = np.random.default_rng(5)
        u = random_controls(p, t, rng)
        x = [xk.values for xk in rollout(p, u, t)]
        z = [rng.normal(size=xk.shape) for xk in x]
        v = random_controls(p, t, rng)
        cg = eval_cost_and_gradient(p, x, u, t)
        tau = 1e-5
        J = lambda s: eval_cost_and_gradient(  # noqa: E731
            p, [a + s * b for a, b in zip(x, z)], [a + s * b for a, b in zip(u, v)], t).J
        fd = (J(tau) - J(-tau)) / (2 * tau)
        an = sum(float(t.prob[k] @ np.sum(cg.grad_x[k].values * z[k], axis=1)) for k in range(4)) + \
            sum(float(t.prob[k] @ np.sum(cg.grad_u[k].values * v[k], axis=1)) for k in range(3))
        assert abs(fd - an) <= 1e-6 * abs(an)


class TestBounds:
    def test_catalog_constants_hold(self):
        res = check_bounds(catalog(), samples=1000)
        assert res.ok

    def test_violation_warns(self):
        p = random_linear(np.random.default_rng(0), 2, 2, 1, 1, c1=1e-3, c2=1e-3)
        with warnings.catch_warnings(record=True) as rec:
            warnings.simplefilter("always")
            res = check_bounds(p, samples=100)
        assert not res.ok
        assert any(issubclass(w.category, BoundWarning) for w in rec)

    def test_finite_difference_flag(self):
        p = scalar_problem(1, lambda x, u: x, lambda x, u: 0 * x)
        assert p.uses_finite_differences
        assert not catalog().uses_finite_differences


class TestControlSets:
    def test_box(self):
        b = Box([-1.0], [1.0])
        np.testing.assert_allclose(b.project(np.array([[2.0], [-3.0], [0.5]])), [[1.0], [-1.0], [0.5]])
        # outward gradient at the lower face is clipped away, interior is not
        np.testing.assert_allclose(b.tangent_project(np.array([[-1.0]]), np.array([[-2.0]])), 0.0)
        np.testing.assert_allclose(b.tangent_project(np.array([[0.0]]), np.array([[2.0]])), 2.0)

    def test_ball(self):
        b = Ball([0.0, 0.0], 1.0)
        np.testing.assert_allclose(b.project(np.array([[3.0, 4.0]])), [[0.6, 0.8]])

    def test_box_union_ties(self):
        bu = BoxUnion([Box([-2.0], [-1.0]), Box([1.0], [2.0])])
        # 0 is equidistant: lowest index wins
        np.testing.assert_allclose(bu.project(np.array([[0.0], [0.9]])), [[-1.0], [1.0]])

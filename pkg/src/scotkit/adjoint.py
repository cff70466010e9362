"""Hamiltonian, backward adjoint recursion, reduced gradient, KKT residuals
and a projected-gradient solver on the scenario tree.

With ``H(k, x, p, q, u) = l + p.b + sum_i q^i.sigma^i`` the adjoint pair is

    p_{N-1}   = E(Phi_x(x_N) | F_{N-1}),   q_{N-1}^i = E(Phi_x(x_N) w_N^i | F_{N-1})
    p_{k-1}   = E(H_x(k) | F_{k-1}),       q_{k-1}^i = E(H_x(k) w_k^i | F_{k-1})

and the multiplier of ``x_{k+1} = b + sigma w_{k+1}`` is
``lambda_{k+1} = p_k + sum_i q_k^i w_{k+1}^i``.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .control import (ControlProblem, _check_tree, control_values, eval_cost_and_gradient,
                      right_inverse_constants, rollout, state_values)
from .tree import AdaptedProcess, ScenarioTree, project_coefficients

log = logging.getLogger(__name__)

ROLLOUT_TOL = 1e-10
FEAS_TOL = 1e-9
KKT_TOL = 1e-8


class AdjointError(ValueError):
    pass


class StallError(RuntimeError):
    def __init__(self, message, u, history):
        super().__init__(message)
        self.u = u
        self.history = history


# -- Hamiltonian ---------------------------------------------------------------

def hamiltonian(p: ControlProblem, k, x, pk, qk, u):
    """``l + p.b + sum_i q^i.sigma^i``.

    Rows are nodes: ``x (M, n)``, ``pk (M, n)``, ``qk (M, d, n)``, ``u (M, m)``.
    Single points (1-D ``x``) give a scalar.
    """
    single = np.ndim(x) == 1
    X = np.atleast_2d(np.asarray(x, float))
    U = np.atleast_2d(np.asarray(u, float))
    P = np.atleast_2d(np.asarray(pk, float))
    Q = np.asarray(qk, float).reshape(X.shape[0], p.d, p.n)
    val = (np.asarray(p.cost(k, X, U), float)
           + np.einsum("mi,mi->m", P, p.b(k, X, U))
           + np.einsum("mki,mik->m", Q, p.sigma(k, X, U)))
    return float(val[0]) if single else val


def hamiltonian_grads(p: ControlProblem, k, X, P, Q, U):
    """``(H_x, H_u)`` node-wise: shapes ``(M, n)`` and ``(M, m)``."""
    bx, bu, sx, su = p.dyn_derivatives(k, X, U)
    lx, lu = p.cost_derivatives(k, X, U)
    hx = lx + np.einsum("mij,mi->mj", bx, P) + np.einsum("mikj,mki->mj", sx, Q)
    hu = lu + np.einsum("mij,mi->mj", bu, P) + np.einsum("mikj,mki->mj", su, Q)
    return hx, hu


# -- adjoint -------------------------------------------------------------------

@dataclass(frozen=True)
class AdjointPair:
    """``p[k]`` has values ``(M_k, n)``, ``q[k]`` has values ``(M_k, d, n)``,
    for stages ``k = 0..N-1``."""

    p: list
    q: list

    def multiplier(self, k: int) -> AdaptedProcess:
        """``lambda_{k+1} = p_k + sum_i q_k^i w_{k+1}^i`` on stage ``k+1`` nodes."""
        tree = self.p[k].tree
        par = tree.parent_index(k + 1)
        w = tree.noise[k + 1]
        vals = self.p[k].values[par] + np.einsum("mi,min->mn", w, self.q[k].values[par])
        return AdaptedProcess(tree, k + 1, vals)

    def norm(self) -> float:
        """``sqrt(sum_k E|p_k|^2 + E|q_k|^2)``, the norm of the multiplier."""
        return float(np.sqrt(sum(pk.sq_norm() + qk.sq_norm() for pk, qk in zip(self.p, self.q))))


def _check_rollout(p, x, u, tree, tol=ROLLOUT_TOL):
    ref = rollout(p, u, tree)
    X = state_values(p, x, tree)
    for k in range(p.N + 1):
        err = np.abs(X[k] - ref[k].values)
        if err.size and err.max() > tol * (1 + np.abs(ref[k].values).max()):
            j = int(np.argmax(err.max(axis=1)))
            raise AdjointError(
                f"x is not the rollout of u: stage {k}, node {tree.offsets[k] + j}, "
                f"mismatch {err.max():.3g}"
            )
    return X


def backward_adjoint(p: ControlProblem, x, u, tree: ScenarioTree) -> AdjointPair:
    _check_tree(p, tree)
    X = _check_rollout(p, x, u, tree)
    U = control_values(p, u, tree)
    P = [None] * p.N
    Q = [None] * p.N
    lam = AdaptedProcess(tree, p.N, np.asarray(p.terminal_gradient(X[p.N]), float))
    for k in range(p.N - 1, -1, -1):
        coefs = project_coefficients(lam)  # (d+1, M_k, n)
        P[k] = AdaptedProcess(tree, k, coefs[0])
        Q[k] = AdaptedProcess(tree, k, np.moveaxis(coefs[1:], 0, 1))
        if k > 0:
            hx, _ = hamiltonian_grads(p, k, X[k], P[k].values, Q[k].values, U[k])
            lam = AdaptedProcess(tree, k, hx)
    return AdjointPair(P, Q)


def initial_multiplier(p: ControlProblem, x, u, adj: AdjointPair) -> np.ndarray:
    """``lambda_0 = H_x(0, x_0, p_0, q_0, u_0)``, the multiplier of ``x_0 = x0``."""
    tree = adj.p[0].tree
    X = state_values(p, x, tree)
    U = control_values(p, u, tree)
    hx, _ = hamiltonian_grads(p, 0, X[0], adj.p[0].values, adj.q[0].values, U[0])
    return hx[0]


def reduced_gradient(p: ControlProblem, u, tree: ScenarioTree, x=None, adj=None) -> list:
    """``H_u(k, x_k, p_k, q_k, u_k)`` node-wise for ``k = 0..N-1``.

    This is the L2(P) representer of the derivative of ``J(u)``.
    """
    x = rollout(p, u, tree) if x is None else x
    adj = backward_adjoint(p, x, u, tree) if adj is None else adj
    X = state_values(p, x, tree)
    U = control_values(p, u, tree)
    out = []
    for k in range(p.N):
        _, hu = hamiltonian_grads(p, k, X[k], adj.p[k].values, adj.q[k].values, U[k])
        out.append(AdaptedProcess(tree, k, hu))
    return out


def inner(a: list, b: list) -> float:
    """``sum_k E(a_k . b_k)`` for lists of processes."""
    return float(sum(np.sum(ak.tree.prob[ak.stage] * np.sum((ak.values * bk.values).reshape(len(ak.values), -1), axis=1))
                     for ak, bk in zip(a, b)))


# -- KKT -------------------------------------------------------------------------

@dataclass
class KKTReport:
    stage_residuals: list
    aggregate: float
    node_residuals: list
    multiplier_norm: float
    transversality: Optional[float]
    constants: dict
    J: float

    def passed(self, tol=KKT_TOL) -> bool:
        ok = self.aggregate <= tol
        if self.transversality is not None:
            ok = ok and self.transversality <= tol
        return ok

    def record(self) -> dict:
        return {
            "stage_residuals": [float(r) for r in self.stage_residuals],
            "aggregate": float(self.aggregate),
            "multiplier_norm": float(self.multiplier_norm),
            "transversality": None if self.transversality is None else float(self.transversality),
            "constants": {k: float(v) for k, v in self.constants.items()},
            "J": float(self.J),
        }


class InfeasibleControl(ValueError):
    pass


def check_feasible(p: ControlProblem, u, tree, tol=FEAS_TOL):
    U = control_values(p, u, tree)
    worst, where = 0.0, None
    for k in range(p.N):
        v = p.controls.violation(U[k])
        if v.size and v.max() > worst:
            worst, where = float(v.max()), (k, int(tree.offsets[k] + np.argmax(v)))
    if worst > tol:
        raise InfeasibleControl(f"control outside U at stage {where[0]}, node {where[1]}: "
                                f"violation {worst:.3g}")
    return U


def kkt_residual(p: ControlProblem, u, tree: ScenarioTree, x=None, adj=None) -> KKTReport:
    U = check_feasible(p, u, tree)
    x = rollout(p, u, tree) if x is None else x
    adj = backward_adjoint(p, x, u, tree) if adj is None else adj
    grad = reduced_gradient(p, u, tree, x, adj)
    nodes, stages = [], []
    for k in range(p.N):
        proj = p.controls.tangent_project(U[k], -grad[k].values)
        r = np.linalg.norm(proj, axis=1)
        nodes.append(r)
        stages.append(float(np.sqrt(tree.prob[k] @ r**2)))
    trans = None
    if p.initial_set is not None:
        lam0 = initial_multiplier(p, x, u, adj)
        trans = float(p.initial_set.normal_distance(p.x0, -lam0))
    cbar, bound = right_inverse_constants(p.N, p.d, p.c1) if p.c1 is not None else (np.nan, np.nan)
    J = eval_cost_and_gradient(p, x, u, tree).J
    return KKTReport(stages, float(np.sqrt(np.sum(np.square(stages)))), nodes, adj.norm(), trans,
                     {"c1": p.c1 if p.c1 is not None else np.nan, "cbar": cbar,
                      "right_inverse_bound": bound}, J)


# -- projected gradient ------------------------------------------------------------

@dataclass
class SolveResult:
    u: list
    report: KKTReport
    history: list = field(default_factory=list)
    converged: bool = False

    def write_log(self, path):
        write_iterate_log(self.history, path)


def write_iterate_log(history, path):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["iter", "J", "step", "kkt"])
        w.writeheader()
        for row in history:
            w.writerow({k: (repr(float(v)) if k != "iter" else int(v)) for k, v in row.items()})


def _project_controls(p, U):
    return [p.controls.project(Uk) for Uk in U]


def solve_projected_gradient(p: ControlProblem, u_init, tree: ScenarioTree, max_iter=500,
                             tol=KKT_TOL, step0=1.0, shrink=0.5, slope=1e-4,
                             max_backtracks=50, metric=1.0, log_path=None,
                             approx_eps=1e-10) -> SolveResult:
    """``u+ = Proj_U(u - s grad J(u) / metric)`` with Armijo backtracking.

    ``metric`` rescales the L2(P) gradient (e.g. the time step for
    discretized SDEs, where the gradient carries a factor ``h``) so that the
    initial step ``step0`` is well scaled.

    The Armijo test needs the required decrease ``slope |<grad J, d>|`` to be
    resolvable against ``approx_eps |J|``. Below that level ``J`` differences
    are rounding noise, and a trial with ``J+ <= J + approx_eps |J|`` is instead
    accepted when it shrinks the KKT residual by the factor ``1 - slope``
    (backtracking reaches such a step whenever ``J`` is locally strongly
    convex).
    """
    U = [Uk.copy() for Uk in control_values(p, u_init, tree)]
    check_feasible(p, U, tree)
    history = []
    x = rollout(p, U, tree)
    J = eval_cost_and_gradient(p, x, U, tree).J
    adj = backward_adjoint(p, x, U, tree)
    step = 0.0
    for it in range(max_iter + 1):
        rep = kkt_residual(p, U, tree, x, adj)
        history.append({"iter": it, "J": J, "step": step, "kkt": rep.aggregate})
        if rep.aggregate <= tol or it == max_iter:
            break
        grad = reduced_gradient(p, U, tree, x, adj)
        s = step0
        for _ in range(max_backtracks):
            trial = _project_controls(p, [Uk - s * g.values / metric for Uk, g in zip(U, grad)])
            diff = [AdaptedProcess(tree, k, trial[k] - U[k]) for k in range(p.N)]
            slope0 = inner(grad, diff)
            x_t = rollout(p, trial, tree)
            J_t = eval_cost_and_gradient(p, x_t, trial, tree).J
            adj_t = None
            if -slope * slope0 > approx_eps * abs(J):
                if J_t <= J + slope * slope0:
                    break
            elif slope0 < 0 and J_t <= J + approx_eps * abs(J):
                adj_t = backward_adjoint(p, x_t, trial, tree)
                if kkt_residual(p, trial, tree, x_t, adj_t).aggregate <= (1 - slope) * rep.aggregate:
                    break
            s *= shrink
        else:
            out = SolveResult([AdaptedProcess(tree, k, U[k]) for k in range(p.N)], rep, history)
            if log_path:
                out.write_log(log_path)
            raise StallError(f"no acceptable step after {max_backtracks} backtracks "
                             f"(iteration {it}, KKT {rep.aggregate:.3g})", out.u, history)
        U, x, J, step = trial, x_t, J_t, s
        adj = adj_t if adj_t is not None else backward_adjoint(p, x, U, tree)
    res = SolveResult([AdaptedProcess(tree, k, U[k]) for k in range(p.N)], rep, history,
                      rep.aggregate <= tol)
    if log_path:
        res.write_log(log_path)
    return res

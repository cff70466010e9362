"""Euler bridge from continuous-time stochastic control to the tree.

``dx = b(t, x, u) dt + sigma(t, x, u) dW`` on ``[0, T]`` becomes, with
``h = T / N`` and Rademacher increments ``w_k`` (mean 0, variance 1),

    x_{k+1} = x_k + h b(t_k, x_k, u_k) + sqrt(h) sigma(t_k, x_k, u_k) w_{k+1}

with running cost ``h l`` and terminal cost ``Phi``. Reported adjoints use
``p(t_k) = p_k`` and ``q(t_k) = q_k / sqrt(h)``; reports call these the
discretized analogue of the continuous relations.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.integrate import solve_ivp

from .adjoint import backward_adjoint, hamiltonian_grads, kkt_residual, reduced_gradient
from .control import ControlProblem, _step_comps, control_values, rollout, state_values
from .controlsets import ControlSet, WholeSpace
from .stage import project
from .tree import AdaptedProcess, NoiseSpec, ScenarioTree, build_tree, lift

NODE_BUDGET = 200_000


@dataclass(frozen=True)
class SdeProblem:
    """Callbacks take ``(t, X, U)`` with node rows, shapes as in
    :mod:`scotkit.control`; ``terminal`` takes ``X`` only."""

    T: float
    n: int
    m: int
    d: int
    x0: np.ndarray
    b: Callable
    sigma: Callable
    cost: Callable
    terminal: Callable
    b_x: Optional[Callable] = None
    b_u: Optional[Callable] = None
    sigma_x: Optional[Callable] = None
    sigma_u: Optional[Callable] = None
    cost_x: Optional[Callable] = None
    cost_u: Optional[Callable] = None
    terminal_x: Optional[Callable] = None
    c1: Optional[float] = None
    c2: Optional[float] = None
    controls: ControlSet = field(default_factory=WholeSpace)
    initial_set: object = None
    name: str = "sde"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.T <= 0:
            raise ValueError("horizon T must be positive")
        object.__setattr__(self, "x0", np.asarray(self.x0, float).reshape(self.n))


def bridge_tree(sp: SdeProblem, N: int, max_nodes: int = NODE_BUDGET) -> ScenarioTree:
    return build_tree(NoiseSpec.rademacher(sp.d, N), max_nodes=max_nodes)


def _opt(fun, wrap):
    return None if fun is None else wrap(fun)


def discretize(sp: SdeProblem, N: int) -> ControlProblem:
    if N < 1:
        raise ValueError("N must be >= 1")
    h = sp.T / N
    rh = np.sqrt(h)
    eye = np.eye(sp.n)

    def t(k):
        return k * h

    def b(k, X, U):
        return X + h * np.asarray(sp.b(t(k), X, U), float)

    def sigma(k, X, U):
        return rh * np.asarray(sp.sigma(t(k), X, U), float)

    def cost(k, X, U):
        return h * np.asarray(sp.cost(t(k), X, U), float)

    c1 = None
    if sp.c1 is not None:
        c1 = max(np.sqrt(sp.n) + h * sp.c1, rh * sp.c1)
    return ControlProblem(
        N=N, n=sp.n, m=sp.m, d=sp.d, x0=sp.x0, b=b, sigma=sigma, cost=cost, terminal=sp.terminal,
        b_x=_opt(sp.b_x, lambda f: lambda k, X, U: eye[None] + h * f(t(k), X, U)),
        b_u=_opt(sp.b_u, lambda f: lambda k, X, U: h * f(t(k), X, U)),
        sigma_x=_opt(sp.sigma_x, lambda f: lambda k, X, U: rh * f(t(k), X, U)),
        sigma_u=_opt(sp.sigma_u, lambda f: lambda k, X, U: rh * f(t(k), X, U)),
        cost_x=_opt(sp.cost_x, lambda f: lambda k, X, U: h * f(t(k), X, U)),
        cost_u=_opt(sp.cost_u, lambda f: lambda k, X, U: h * f(t(k), X, U)),
        terminal_x=sp.terminal_x,
        c1=c1, c2=sp.c2, controls=sp.controls, initial_set=sp.initial_set,
        name=f"{sp.name}_N{N}", meta={"h": h, "T": sp.T, "sde": sp.name, **sp.meta},
    )


def continuous_adjoint(adj, h):
    """``(p(t_k), q(t_k))`` node values with the ``q / sqrt(h)`` convention."""
    return [pk.values for pk in adj.p], [qk.values / np.sqrt(h) for qk in adj.q]


# -- moment bound ------------------------------------------------------------------

def moment_constant(T: float, c1: float, d: int) -> float:
    """``max(24, 6T) exp(6 T c1^2 max(T, 4d))`` (``inf`` on overflow)."""
    with np.errstate(over="ignore"):
        return float(max(24.0, 6.0 * T) * np.exp(6.0 * T * c1**2 * max(T, 4.0 * d)))


def expected_running_max(tree: ScenarioTree, X: list) -> float:
    """``E(max_k |x_k|^2)`` along paths, exactly on the tree."""
    run = np.sum(X[0] ** 2, axis=1)
    for k in range(1, len(X)):
        run = np.maximum(run[tree.parent_index(k)], np.sum(X[k] ** 2, axis=1))
    return float(tree.prob[len(X) - 1] @ run)


def verify_moment_bound(sp: SdeProblem, N: int, controls=None, tree=None, seed=0,
                        n_controls=3) -> dict:
    """Compare ``E max_k |x_k|^2`` with the Gronwall bound
    ``c (|x0|^2 + E sum_k h |b(t_k, 0, u_k)|^2 + E sum_k h |sigma(t_k, 0, u_k)|^2)``.

    ``controls`` is a list of control sequences; by default ``n_controls``
    seeded random ones are drawn (plus the zero control).
    """
    if sp.c1 is None:
        raise ValueError("moment bound needs the declared constant c1")
    tree = bridge_tree(sp, N) if tree is None else tree
    dp = discretize(sp, N)
    h = sp.T / N
    c = moment_constant(sp.T, sp.c1, sp.d)
    if controls is None:
        rng = np.random.default_rng(seed)
        controls = [[np.zeros((tree.n_nodes[k], sp.m)) for k in range(N)]]
        for _ in range(n_controls):
            controls.append([dp.controls.project(rng.normal(size=(tree.n_nodes[k], sp.m)))
                             for k in range(N)])
    rows = []
    for u in controls:
        U = control_values(dp, u, tree)
        X = [x.values for x in rollout(dp, U, tree)]
        lhs = expected_running_max(tree, X)
        integral = 0.0
        for k in range(N):
            Z = np.zeros_like(X[k])
            b0 = np.asarray(sp.b(k * h, Z, U[k]), float)
            s0 = np.asarray(sp.sigma(k * h, Z, U[k]), float)
            integral += h * float(tree.prob[k] @ (np.sum(b0**2, axis=1)
                                                  + np.sum(s0.reshape(len(s0), -1) ** 2, axis=1)))
        base = float(sp.x0 @ sp.x0) + integral
        rhs = c * base
        rows.append({"lhs": lhs, "rhs": rhs, "base": base, "ok": bool(lhs <= rhs)})
    return {"constant": c, "N": N, "h": h, "checks": rows,
            "violations": sum(not r["ok"] for r in rows),
            "passed": all(r["ok"] for r in rows),
            "note": "discretized analogue; expectations exact on the tree"}


# -- weak PMP -----------------------------------------------------------------------

def weak_pmp_check(sp: SdeProblem, N: int, u, tree=None) -> dict:
    """Adjoint equation and variational inequality on the discretized problem.

    Stationarity is reported both in the discrete L2(P) units of the tree and
    rescaled to continuous time (``H_u / h`` in the norm
    ``sqrt(h sum_k E|.|^2)``).
    """
    tree = bridge_tree(sp, N) if tree is None else tree
    dp = discretize(sp, N)
    h = sp.T / N
    x = rollout(dp, u, tree)
    adj = backward_adjoint(dp, x, u, tree)
    rep = kkt_residual(dp, u, tree, x, adj)
    # adjoint equation: (p_{k-1}, q_{k-1}) is the X_k part of H_x(k)
    X = state_values(dp, x, tree)
    U = control_values(dp, u, tree)
    adj_res = 0.0
    for k in range(1, N):
        hx, _ = hamiltonian_grads(dp, k, X[k], adj.p[k].values, adj.q[k].values, U[k])
        dec, _ = project(AdaptedProcess(tree, k, hx))
        lam = adj.multiplier(k - 1)
        diff = AdaptedProcess(tree, k, (dec.comps[0][tree.parent_index(k)]
                                        + np.einsum("mi,imn->mn", tree.noise[k],
                                                    dec.comps[1:][:, tree.parent_index(k)]))
                              - lam.values)
        adj_res = max(adj_res, diff.norm())
    stat_cont = np.sqrt(h * sum(s**2 for s in rep.stage_residuals)) / h
    p_c, q_c = continuous_adjoint(adj, h)
    return {"N": N, "h": h, "stationarity": rep.aggregate, "stationarity_continuous": float(stat_cont),
            "adjoint_residual": float(adj_res), "transversality": rep.transversality,
            "J": rep.J, "multiplier_norm": rep.multiplier_norm,
            "p0": p_c[0][0].tolist(), "q0": q_c[0][0].tolist(),
            "convention": "discretized analogue; q(t) = q_discrete / sqrt(h)"}


# -- families ----------------------------------------------------------------------

def _mat(a, shape):
    return np.asarray(a, float).reshape(shape)


def lq_sde(T, x0, A, B, Q, R, QT, C=None, D=None, s=None, controls=None, initial_set=None,
           name="lq_sde") -> SdeProblem:
    """``dx = (A x + B u) dt + sum_i (C_i x + D_i u + s_i) dW^i``,
    cost ``x'Qx/2 + u'Ru/2``, terminal ``x'QT x/2`` (time-invariant)."""
    x0 = np.atleast_1d(np.asarray(x0, float))
    n = x0.size
    A = _mat(A, (n, n))
    m = np.atleast_2d(np.asarray(B, float)).reshape(n, -1).shape[1]
    B = _mat(B, (n, m))
    d = 1 if C is None and D is None and s is None else len(
        next(v for v in (C, D, s) if v is not None))
    C = np.zeros((d, n, n)) if C is None else _mat(C, (d, n, n))
    D = np.zeros((d, n, m)) if D is None else _mat(D, (d, n, m))
    s = np.zeros((d, n)) if s is None else _mat(s, (d, n))
    Q, R, QT = _mat(Q, (n, n)), _mat(R, (m, m)), _mat(QT, (n, n))
    Cs = np.moveaxis(C, 0, 1)  # (n, d, n)
    Ds = np.moveaxis(D, 0, 1)
    sT = s.T  # (n, d)

    def sigma(t, X, U):
        return np.einsum("idj,mj->mid", Cs, X) + np.einsum("idj,mj->mid", Ds, U) + sT[None]

    def tile(M, a):
        return np.broadcast_to(a, (M,) + a.shape)

    c1 = max(np.linalg.norm(A) + np.linalg.norm(B),
             max(np.linalg.norm(C[i]) + np.linalg.norm(D[i]) for i in range(d)))
    return SdeProblem(
        T=float(T), n=n, m=m, d=d, x0=x0,
        b=lambda t, X, U: X @ A.T + U @ B.T,
        sigma=sigma,
        cost=lambda t, X, U: 0.5 * np.einsum("mi,ij,mj->m", X, Q, X) + 0.5 * np.einsum("mi,ij,mj->m", U, R, U),
        terminal=lambda X: 0.5 * np.einsum("mi,ij,mj->m", X, QT, X),
        b_x=lambda t, X, U: tile(len(X), A), b_u=lambda t, X, U: tile(len(X), B),
        sigma_x=lambda t, X, U: tile(len(X), Cs), sigma_u=lambda t, X, U: tile(len(X), Ds),
        cost_x=lambda t, X, U: X @ (0.5 * (Q + Q.T)), cost_u=lambda t, X, U: U @ (0.5 * (R + R.T)),
        terminal_x=lambda X: X @ (0.5 * (QT + QT.T)),
        c1=float(c1), c2=float(max(np.linalg.norm(Q), np.linalg.norm(R), np.linalg.norm(QT))),
        controls=controls or WholeSpace(), initial_set=initial_set, name=name,
        meta={"family": "lq_sde", "A": A, "B": B, "C": C, "D": D, "s": s, "Q": Q, "R": R, "QT": QT},
    )


def catalog_nonlinear_sde(T, x0, A, B, Q, R, QT, C=None, D=None, s=None, beta=0.1, gamma=0.1,
                          eta=0.1, controls=None, initial_set=None,
                          name="catalog_nonlinear_sde") -> SdeProblem:
    """LQ data plus the bounded smooth perturbations of the discrete catalog
    family: ``beta tanh(x) + beta B sin(u)`` in the drift, ``gamma sin(x)`` in
    every diffusion column, ``eta`` cosine/sine/tanh terms in the costs."""
    base = lq_sde(T, x0, A, B, Q, R, QT, C, D, s)
    n, m = base.n, base.m
    Bm = base.meta["B"]
    eye = np.eye(n)

    def b(t, X, U):
        return base.b(t, X, U) + beta * np.tanh(X) + beta * np.sin(U) @ Bm.T

    def b_x(t, X, U):
        return base.b_x(t, X, U) + beta * (1 - np.tanh(X) ** 2)[:, :, None] * eye[None]

    def b_u(t, X, U):
        return Bm[None] * (1.0 + beta * np.cos(U))[:, None, :]

    def sigma(t, X, U):
        return base.sigma(t, X, U) + gamma * np.sin(X)[:, :, None]

    def sigma_x(t, X, U):
        diag = gamma * np.cos(X)[:, :, None] * eye[None]
        return base.sigma_x(t, X, U) + diag[:, :, None, :]

    def cost(t, X, U):
        return base.cost(t, X, U) + eta * np.cos(X).sum(axis=1) + eta * np.sin(U).sum(axis=1)

    def cost_x(t, X, U):
        return base.cost_x(t, X, U) - eta * np.sin(X)

    def cost_u(t, X, U):
        return base.cost_u(t, X, U) + eta * np.cos(U)

    def terminal(X):
        return base.terminal(X) + eta * np.tanh(X).sum(axis=1)

    def terminal_x(X):
        return base.terminal_x(X) + eta * (1 - np.tanh(X) ** 2)

    Am, Cm, Dm = base.meta["A"], base.meta["C"], base.meta["D"]
    c1 = max(np.linalg.norm(Am) + abs(beta) * np.sqrt(n) + (1 + abs(beta)) * np.linalg.norm(Bm),
             max(np.linalg.norm(Cm[i]) + abs(gamma) * np.sqrt(n) + np.linalg.norm(Dm[i])
                 for i in range(base.d)))
    return SdeProblem(
        T=base.T, n=n, m=m, d=base.d, x0=base.x0, b=b, sigma=sigma, cost=cost, terminal=terminal,
        b_x=b_x, b_u=b_u, sigma_x=sigma_x, sigma_u=base.sigma_u, cost_x=cost_x, cost_u=cost_u,
        terminal_x=terminal_x, c1=float(c1), c2=base.c2,
        controls=controls or WholeSpace(), initial_set=initial_set, name=name,
        meta={**base.meta, "family": "catalog_nonlinear_sde", "beta": beta, "gamma": gamma,
              "eta": eta},
    )


# -- Riccati oracle -------------------------------------------------------------------

@dataclass
class RiccatiSolution:
    t: np.ndarray
    P: np.ndarray          # (len(t), n, n)
    gain: np.ndarray       # (len(t), m, n), u = -gain x

    def at(self, t):
        """Linear interpolation of ``(P, gain)`` on the dense output grid."""
        j = np.clip(np.searchsorted(self.t, t), 1, len(self.t) - 1)
        w = (t - self.t[j - 1]) / (self.t[j] - self.t[j - 1])
        return ((1 - w) * self.P[j - 1] + w * self.P[j],
                (1 - w) * self.gain[j - 1] + w * self.gain[j])


def riccati_oracle(sp: SdeProblem, n_grid: int = 4001) -> RiccatiSolution:
    """Backward Riccati ODE for the ``lq_sde`` family (stochastic LQ)::

        -P' = A'P + PA + Q + sum C_i'PC_i - S' Rhat^{-1} S,
        S = B'P + sum D_i'PC_i,  Rhat = R + sum D_i'PD_i,  P(T) = QT,

    feedback ``u = -Rhat^{-1} S x``. The additive noise ``s`` does not enter
    as long as ``D = 0`` (otherwise the feedback picks up an affine term,
    which is not covered).
    """
    M = sp.meta
    if M.get("family") != "lq_sde":
        raise ValueError("Riccati oracle needs an lq_sde problem")
    A, B, C, D, Q, R, QT = (M[k] for k in ("A", "B", "C", "D", "Q", "R", "QT"))
    if np.any(D) and np.any(M["s"]):
        raise ValueError("Riccati oracle: D != 0 with additive noise gives an affine feedback")
    n = A.shape[0]

    def parts(P):
        S = B.T @ P + sum(D[i].T @ P @ C[i] for i in range(len(C)))
        Rh = R + sum(D[i].T @ P @ D[i] for i in range(len(D)))
        return S, Rh

    def rhs(s, y):
        # s = T - t runs forward
        P = y.reshape(n, n)
        S, Rh = parts(P)
        dP = A.T @ P + P @ A + Q + sum(C[i].T @ P @ C[i] for i in range(len(C))) - S.T @ np.linalg.solve(Rh, S)
        return dP.ravel()

    s_eval = np.linspace(0.0, sp.T, n_grid)
    sol = solve_ivp(rhs, (0.0, sp.T), QT.ravel(), t_eval=s_eval, method="DOP853",
                    rtol=1e-12, atol=1e-13)
    P = sol.y.T.reshape(-1, n, n)[::-1]
    t = (sp.T - s_eval)[::-1]
    gain = np.array([np.linalg.solve(parts(Pk)[1], parts(Pk)[0]) for Pk in P])
    return RiccatiSolution(t, P, gain)


def riccati_control_error(sp: SdeProblem, N: int, u, tree, ric: RiccatiSolution) -> float:
    """``sqrt(h sum_k E|u_k - u*(t_k, x_k)|^2)`` with ``x`` the rollout of ``u``."""
    dp = discretize(sp, N)
    h = sp.T / N
    x = rollout(dp, u, tree)
    U = control_values(dp, u, tree)
    tot = 0.0
    for k in range(N):
        _, K = ric.at(k * h)
        err = U[k] + x[k].values @ K.T
        tot += h * float(tree.prob[k] @ np.sum(err**2, axis=1))
    return float(np.sqrt(tot))


def riccati_controls(sp: SdeProblem, N: int, tree, ric: RiccatiSolution) -> list:
    """Feedback ``u_k = -K(t_k) x_k`` rolled out on the tree."""
    dp = discretize(sp, N)
    h = sp.T / N
    X = [np.broadcast_to(sp.x0, (1, sp.n)).copy()]
    U = []
    for k in range(N):
        _, K = ric.at(k * h)
        U.append(-X[k] @ K.T)
        X.append(lift(_step_comps(dp.b(k, X[k], U[k]), dp.sigma(k, X[k], U[k])), tree, k + 1))
    return U

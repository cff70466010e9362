"""Discrete-time stochastic control problems on a scenario tree.

All callbacks are vectorised over the nodes of one stage: ``X`` has shape
``(M, n)``, ``U`` has shape ``(M, m)``. Shapes of the returned arrays:

=================  ==================
``b``              ``(M, n)``
``sigma``          ``(M, n, d)``       column ``i`` multiplies ``w^i``
``cost``           ``(M,)``
``terminal``       ``(M,)``
``b_x / b_u``      ``(M, n, n) / (M, n, m)``
``sigma_x / _u``   ``(M, n, d, n) / (M, n, d, m)``
``cost_x / _u``    ``(M, n) / (M, m)``
``terminal_x``     ``(M, n)``
=================  ==================

Derivative callbacks are optional; missing ones are replaced by central
differences and the problem reports ``uses_finite_differences``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, NamedTuple, Optional

import numpy as np

from .controlsets import ControlSet, WholeSpace
from .stage import StageDecomposition, assemble, decompose, project
from .tree import AdaptedProcess, ScenarioTree, lift

Callback = Callable[..., np.ndarray]


class DynamicsError(RuntimeError):
    """A callback produced NaN/inf."""


class BoundWarning(UserWarning):
    pass


@dataclass(frozen=True)
class ControlProblem:
    N: int
    n: int
    m: int
    d: int
    x0: np.ndarray
    b: Callback
    sigma: Callback
    cost: Callback
    terminal: Callback
    b_x: Optional[Callback] = None
    b_u: Optional[Callback] = None
    sigma_x: Optional[Callback] = None
    sigma_u: Optional[Callback] = None
    cost_x: Optional[Callback] = None
    cost_u: Optional[Callback] = None
    terminal_x: Optional[Callback] = None
    c1: Optional[float] = None
    c2: Optional[float] = None
    controls: ControlSet = field(default_factory=WholeSpace)
    initial_set: object = None  # regularity.sets.CatalogSet or None
    name: str = "problem"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        x0 = np.asarray(self.x0, dtype=float).reshape(self.n)
        object.__setattr__(self, "x0", x0)

    @property
    def uses_finite_differences(self) -> bool:
        names = ("b_x", "b_u", "sigma_x", "sigma_u", "cost_x", "cost_u", "terminal_x")
        return any(getattr(self, a) is None for a in names)

    def with_x0(self, x0) -> "ControlProblem":
        return replace(self, x0=np.asarray(x0, dtype=float))

    # -- derivatives with finite-difference fallback ------------------------
    def dyn_derivatives(self, k, X, U):
        """``(b_x, b_u, sigma_x, sigma_u)`` at the given node states."""
        bx = self.b_x(k, X, U) if self.b_x else _fd(lambda Y: self.b(k, Y, U), X)
        bu = self.b_u(k, X, U) if self.b_u else _fd(lambda V: self.b(k, X, V), U)
        sx = self.sigma_x(k, X, U) if self.sigma_x else _fd(lambda Y: self.sigma(k, Y, U), X)
        su = self.sigma_u(k, X, U) if self.sigma_u else _fd(lambda V: self.sigma(k, X, V), U)
        return bx, bu, sx, su

    def cost_derivatives(self, k, X, U):
        lx = self.cost_x(k, X, U) if self.cost_x else _fd(lambda Y: self.cost(k, Y, U), X)
        lu = self.cost_u(k, X, U) if self.cost_u else _fd(lambda V: self.cost(k, X, V), U)
        return lx, lu

    def terminal_gradient(self, X):
        return self.terminal_x(X) if self.terminal_x else _fd(self.terminal, X)


def _fd(fun, A):
    """Central differences with step ``1e-6 * (1 + |a_j|)``; derivative axis last."""
    A = np.asarray(A, dtype=float)
    cols = []
    for j in range(A.shape[1]):
        h = 1e-6 * (1.0 + np.abs(A[:, j]))
        Ap, Am = A.copy(), A.copy()
        Ap[:, j] += h
        Am[:, j] -= h
        fp, fm = fun(Ap), fun(Am)
        hh = h.reshape((-1,) + (1,) * (np.ndim(fp) - 1))
        cols.append((fp - fm) / (2 * hh))
    return np.stack(cols, axis=-1)


class TrajectoryPair(NamedTuple):
    x: list
    u: list


def _check_finite(arr, what, k, tree):
    bad = ~np.isfinite(arr.reshape(arr.shape[0], -1)).all(axis=1)
    if bad.any():
        j = int(np.argmax(bad))
        raise DynamicsError(
            f"{what} returned a non-finite value at stage {k}, node {tree.offsets[k] + j}"
        )
    return arr


def _vals(seq, tree, width, label, stages):
    out = []
    for k in stages:
        item = seq[k]
        vals = item.values if isinstance(item, AdaptedProcess) else np.asarray(item, float)
        vals = np.broadcast_to(vals, (tree.n_nodes[k], width)) if vals.ndim <= 1 else vals
        if vals.shape != (tree.n_nodes[k], width):
            raise ValueError(f"{label}[{k}] must have shape ({tree.n_nodes[k]}, {width}), got {vals.shape}")
        out.append(np.asarray(vals, dtype=float))
    return out


def control_values(p: ControlProblem, u, tree):
    if len(u) != p.N:
        raise ValueError(f"expected {p.N} control stages, got {len(u)}")
    return _vals(u, tree, p.m, "u", range(p.N))


def state_values(p: ControlProblem, x, tree):
    if len(x) != p.N + 1:
        raise ValueError(f"expected {p.N + 1} state stages, got {len(x)}")
    return _vals(x, tree, p.n, "x", range(p.N + 1))


def _check_tree(p, tree):
    if tree.N != p.N or tree.d != p.d:
        raise ValueError(f"tree (N={tree.N}, d={tree.d}) does not match problem (N={p.N}, d={p.d})")


def _step_comps(bvals, svals):
    """Stack ``b`` and the columns of ``sigma`` as X_{k+1} coefficients."""
    return np.concatenate([bvals[None], np.moveaxis(svals, 2, 0)], axis=0)


def rollout(p: ControlProblem, u, tree: ScenarioTree) -> list[AdaptedProcess]:
    """States solving ``x_{k+1} = b + sigma w_{k+1}`` from ``x_0 = x0``."""
    _check_tree(p, tree)
    U = control_values(p, u, tree)
    X = [np.broadcast_to(p.x0, (1, p.n)).copy()]
    for k in range(p.N):
        bv = _check_finite(np.asarray(p.b(k, X[k], U[k]), float), "b", k, tree)
        sv = _check_finite(np.asarray(p.sigma(k, X[k], U[k]), float), "sigma", k, tree)
        X.append(lift(_step_comps(bv, sv), tree, k + 1))
    return [AdaptedProcess(tree, k, X[k]) for k in range(p.N + 1)]


class StageResidual(NamedTuple):
    values: AdaptedProcess
    dec: StageDecomposition
    norm: float
    outside: float  # L2 norm of the component outside X_k


def residual_g(p: ControlProblem, x, u, tree) -> list[StageResidual]:
    """``g_0 = x0 - x_0``, ``g_{k+1} = b + sigma w_{k+1} - x_{k+1}``."""
    _check_tree(p, tree)
    X, U = state_values(p, x, tree), control_values(p, u, tree)
    g0 = AdaptedProcess(tree, 0, p.x0[None] - X[0])
    out = [StageResidual(g0, StageDecomposition(tree, 0, g0.values[None]), g0.norm(), 0.0)]
    for k in range(p.N):
        bv = _check_finite(np.asarray(p.b(k, X[k], U[k]), float), "b", k, tree)
        sv = _check_finite(np.asarray(p.sigma(k, X[k], U[k]), float), "sigma", k, tree)
        comps = _step_comps(bv, sv)
        xdec, outside = project(AdaptedProcess(tree, k + 1, X[k + 1]))
        vals = AdaptedProcess(tree, k + 1, lift(comps, tree, k + 1) - X[k + 1])
        dec = StageDecomposition(tree, k + 1, comps - xdec.comps)
        out.append(StageResidual(vals, dec, vals.norm(), outside))
    return out


def _apply_step_derivative(bx, bu, sx, su, Z, V):
    """Coefficients of ``b_x z + b_u v + sum_i (sigma_x^i z + sigma_u^i v) w^i``."""
    y0 = np.einsum("mij,mj->mi", bx, Z)
    ys = np.einsum("mikj,mj->kmi", sx, Z)
    if V is not None:
        y0 = y0 + np.einsum("mij,mj->mi", bu, V)
        ys = ys + np.einsum("mikj,mj->kmi", su, V)
    return np.concatenate([y0[None], ys], axis=0)


def linearize_g(p: ControlProblem, x, u, tree, z, v) -> list[AdaptedProcess]:
    """Gateaux derivative ``Dg(x,u)(z,v)`` node by node."""
    _check_tree(p, tree)
    X, U = state_values(p, x, tree), control_values(p, u, tree)
    Z, V = state_values(p, z, tree), control_values(p, v, tree)
    out = [AdaptedProcess(tree, 0, -Z[0])]
    for k in range(p.N):
        bx, bu, sx, su = p.dyn_derivatives(k, X[k], U[k])
        comps = _apply_step_derivative(bx, bu, sx, su, Z[k], V[k])
        out.append(AdaptedProcess(tree, k + 1, lift(comps, tree, k + 1) - Z[k + 1]))
    return out


def right_inverse_constants(N: int, d: int, c1: float) -> tuple[float, float]:
    """``(cbar, (N+1) cbar^(N+1))`` with ``cbar = (d+2)^2 (c1^2 + 1)``."""
    cbar = (d + 2) ** 2 * (c1**2 + 1.0)
    return cbar, (N + 1) * cbar ** (N + 1)


def solve_right_inverse(p: ControlProblem, x, u, tree, delta) -> list[AdaptedProcess]:
    """Unique ``z`` with ``Dg(x,u)(z, 0) = delta``.

    ``delta`` entries may be node-valued processes or stage decompositions;
    processes are projected onto ``X_k`` and rejected (``NotInStageSpace``)
    when they are not members.
    """
    _check_tree(p, tree)
    X, U = state_values(p, x, tree), control_values(p, u, tree)
    if len(delta) != p.N + 1:
        raise ValueError(f"delta needs {p.N + 1} stages, got {len(delta)}")
    D = []
    for k, item in enumerate(delta):
        if isinstance(item, StageDecomposition):
            D.append(assemble(item).values)
        else:
            proc = item if isinstance(item, AdaptedProcess) else AdaptedProcess(tree, k, item)
            decompose(proc)
            D.append(proc.values)
    Z = [-D[0]]
    for k in range(p.N):
        bx, _, sx, _ = p.dyn_derivatives(k, X[k], U[k])
        comps = _apply_step_derivative(bx, None, sx, None, Z[k], None)
        Z.append(lift(comps, tree, k + 1) - D[k + 1])
    return [AdaptedProcess(tree, k, Z[k]) for k in range(p.N + 1)]


class CostGradient(NamedTuple):
    J: float
    grad_x: list  # AdaptedProcess per stage 0..N
    grad_u: list  # AdaptedProcess per stage 0..N-1


def eval_cost_and_gradient(p: ControlProblem, x, u, tree) -> CostGradient:
    """``J = E(sum_k l + Phi)`` and its L2 Riesz representers, so that
    ``Df(z, v) = sum_k E(grad_x[k] . z_k) + sum_k E(grad_u[k] . v_k)``."""
    _check_tree(p, tree)
    X, U = state_values(p, x, tree), control_values(p, u, tree)
    J = 0.0
    gx, gu = [], []
    for k in range(p.N):
        lv = _check_finite(np.asarray(p.cost(k, X[k], U[k]), float), "cost", k, tree)
        J += float(tree.prob[k] @ lv)
        lx, lu = p.cost_derivatives(k, X[k], U[k])
        gx.append(AdaptedProcess(tree, k, lx))
        gu.append(AdaptedProcess(tree, k, lu))
    phi = _check_finite(np.asarray(p.terminal(X[p.N]), float), "terminal", p.N, tree)
    J += float(tree.prob[p.N] @ phi)
    gx.append(AdaptedProcess(tree, p.N, p.terminal_gradient(X[p.N])))
    return CostGradient(J, gx, gu)


def cost(p: ControlProblem, u, tree) -> float:
    x = rollout(p, u, tree)
    return eval_cost_and_gradient(p, x, u, tree).J


@dataclass
class BoundCheck:
    c1: float
    c2: float
    max_dyn_ratio: float
    max_cost_ratio: float
    samples: int
    seed: int

    @property
    def ok(self) -> bool:
        return self.max_dyn_ratio <= 1.0 + 1e-12 and self.max_cost_ratio <= 1.0 + 1e-12


def check_bounds(p: ControlProblem, samples: int = 1000, box: float = 5.0, seed: int = 0) -> BoundCheck:
    """Spot-check the declared derivative bound ``c1`` and growth bound ``c2``.

    Matrix norms are Frobenius. Violations raise a :class:`BoundWarning`, not an
    error: the constants only enter error bounds.
    """
    rng = np.random.default_rng(seed)
    X = rng.uniform(-box, box, (samples, p.n))
    U = rng.uniform(-box, box, (samples, p.m))
    c1 = p.c1 if p.c1 is not None else np.inf
    c2 = p.c2 if p.c2 is not None else np.inf
    dyn, cst = 0.0, 0.0
    nx = np.linalg.norm(X, axis=1)
    nu = np.linalg.norm(U, axis=1)
    for k in range(p.N):
        bx, bu, sx, su = p.dyn_derivatives(k, X, U)
        lhs = np.linalg.norm(bx, axis=(1, 2)) + np.linalg.norm(bu, axis=(1, 2))
        for i in range(p.d):
            col = np.linalg.norm(sx[:, :, i, :], axis=(1, 2)) + np.linalg.norm(su[:, :, i, :], axis=(1, 2))
            lhs = np.maximum(lhs, col)
        dyn = max(dyn, float(np.max(lhs)) / c1)
        lv = np.abs(p.cost(k, X, U))
        lx, lu = p.cost_derivatives(k, X, U)
        grow = (1 + nx + nu)
        cst = max(cst, float(np.max(lv / grow**2)) / c2,
                  float(np.max((np.linalg.norm(lx, axis=1) + np.linalg.norm(lu, axis=1)) / grow)) / c2)
    phi = np.abs(p.terminal(X))
    cst = max(cst, float(np.max(phi / (1 + nx) ** 2)) / c2,
              float(np.max(np.linalg.norm(p.terminal_gradient(X), axis=1) / (1 + nx))) / c2)
    res = BoundCheck(float(c1), float(c2), dyn, cst, samples, seed)
    if not res.ok:
        warnings.warn(
            f"{p.name}: declared constants violated on samples "
            f"(c1 ratio {dyn:.3g}, c2 ratio {cst:.3g})",
            BoundWarning,
            stacklevel=2,
        )
    return res

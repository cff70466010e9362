"""Ready-made problem families: linear-quadratic and a smooth nonlinear catalog.

Matrices may be given once (time invariant) or as a list with one entry per
stage. ``C`` and ``D`` are lists over noise coordinates.
"""
from __future__ import annotations

import numpy as np

from .control import ControlProblem
from .controlsets import ControlSet, WholeSpace


def _per_stage(mat, N, shape, label):
    arr = np.asarray(mat, dtype=float)
    if arr.shape == shape:
        return [arr] * N
    if arr.shape == (N,) + shape:
        return list(arr)
    raise ValueError(f"{label} must have shape {shape} or {(N,) + shape}, got {arr.shape}")


def _noise_mats(mats, N, d, shape, label):
    if mats is None:
        return [[np.zeros(shape)] * d for _ in range(N)]
    arr = np.asarray(mats, dtype=float)
    if arr.shape == (d,) + shape:
        return [list(arr)] * N
    if arr.shape == (N, d) + shape:
        return [list(a) for a in arr]
    raise ValueError(f"{label} must have shape {(d,) + shape} or {(N, d) + shape}, got {arr.shape}")


def _fro(a):
    return float(np.linalg.norm(a))


class _Data:
    def __init__(self, N, n, m, d, A, B, C, D, Q, R, QN):
        self.A = _per_stage(A, N, (n, n), "A")
        self.B = _per_stage(B, N, (n, m), "B")
        self.C = _noise_mats(C, N, d, (n, n), "C")
        self.D = _noise_mats(D, N, d, (n, m), "D")
        self.Q = _per_stage(Q, N, (n, n), "Q")
        self.R = _per_stage(R, N, (m, m), "R")
        self.QN = np.asarray(QN, dtype=float).reshape(n, n)
        self.Cs = [np.stack(c, axis=1) for c in self.C]  # (n, d, n)
        self.Ds = [np.stack(c, axis=1) for c in self.D]  # (n, d, m)


def linear_quadratic(N, n, m, d, x0, A, B, Q, R, QN, C=None, D=None,
                     controls: ControlSet | None = None, c1=None, c2=None,
                     initial_set=None, name="linear_quadratic") -> ControlProblem:
    """``x+ = A x + B u + sum_i (C_i x + D_i u) w^i``, cost ``x'Qx/2 + u'Ru/2``,
    terminal ``x'QN x/2``."""
    s = _Data(N, n, m, d, A, B, C, D, Q, R, QN)

    def b(k, X, U):
        return X @ s.A[k].T + U @ s.B[k].T

    def sigma(k, X, U):
        return np.einsum("idj,mj->mid", s.Cs[k], X) + np.einsum("idj,mj->mid", s.Ds[k], U)

    def cost(k, X, U):
        return 0.5 * np.einsum("mi,ij,mj->m", X, s.Q[k], X) + 0.5 * np.einsum("mi,ij,mj->m", U, s.R[k], U)

    def terminal(X):
        return 0.5 * np.einsum("mi,ij,mj->m", X, s.QN, X)

    def tile(mat, M):
        return np.broadcast_to(mat, (M,) + mat.shape)

    if c1 is None:
        c1 = max(
            max(_fro(s.A[k]) + _fro(s.B[k]) for k in range(N)),
            max(_fro(s.C[k][i]) + _fro(s.D[k][i]) for k in range(N) for i in range(d)),
        )
    if c2 is None:
        c2 = max([_fro(q) for q in s.Q] + [_fro(r) for r in s.R] + [_fro(s.QN), 1e-12])
    return ControlProblem(
        N=N, n=n, m=m, d=d, x0=x0, b=b, sigma=sigma, cost=cost, terminal=terminal,
        b_x=lambda k, X, U: tile(s.A[k], X.shape[0]),
        b_u=lambda k, X, U: tile(s.B[k], X.shape[0]),
        sigma_x=lambda k, X, U: tile(s.Cs[k], X.shape[0]),
        sigma_u=lambda k, X, U: tile(s.Ds[k], X.shape[0]),
        cost_x=lambda k, X, U: X @ (0.5 * (s.Q[k] + s.Q[k].T)),
        cost_u=lambda k, X, U: U @ (0.5 * (s.R[k] + s.R[k].T)),
        terminal_x=lambda X: X @ (0.5 * (s.QN + s.QN.T)),
        c1=float(c1), c2=float(c2), controls=controls or WholeSpace(),
        initial_set=initial_set, name=name,
        meta={"family": "linear_quadratic", "A": s.A, "B": s.B, "C": s.C, "D": s.D,
              "Q": s.Q, "R": s.R, "QN": s.QN},
    )


def catalog_nonlinear(N, n, m, d, x0, A, B, Q, R, QN, C=None, D=None,
                      beta=0.1, gamma=0.1, eta=0.1,
                      controls: ControlSet | None = None, c1=None, c2=None,
                      initial_set=None, name="catalog_nonlinear") -> ControlProblem:
    """Linear-quadratic data plus bounded smooth perturbations::

        b       = A x + B u + beta tanh(x) + beta B sin(u)
        sigma^i = C_i x + D_i u + gamma sin(x)
        l       = x'Qx/2 + u'Ru/2 + eta sum cos(x) + eta sum sin(u)
        Phi     = x'QN x/2 + eta sum tanh(x)

    The declared ``c1`` defaults to a Frobenius bound valid everywhere.
    """
    s = _Data(N, n, m, d, A, B, C, D, Q, R, QN)
    eye = np.eye(n)

    def b(k, X, U):
        return X @ s.A[k].T + U @ s.B[k].T + beta * np.tanh(X) + beta * np.sin(U) @ s.B[k].T

    def b_x(k, X, U):
        return s.A[k][None] + beta * (1 - np.tanh(X) ** 2)[:, :, None] * eye[None]

    def b_u(k, X, U):
        return s.B[k][None] * (1.0 + beta * np.cos(U))[:, None, :]

    def sigma(k, X, U):
        lin = np.einsum("idj,mj->mid", s.Cs[k], X) + np.einsum("idj,mj->mid", s.Ds[k], U)
        return lin + gamma * np.sin(X)[:, :, None]

    def sigma_x(k, X, U):
        diag = gamma * np.cos(X)[:, :, None] * eye[None]  # (M, n, n)
        return s.Cs[k][None] + diag[:, :, None, :]

    def sigma_u(k, X, U):
        return np.broadcast_to(s.Ds[k], (X.shape[0],) + s.Ds[k].shape)

    def cost(k, X, U):
        quad = 0.5 * np.einsum("mi,ij,mj->m", X, s.Q[k], X) + 0.5 * np.einsum("mi,ij,mj->m", U, s.R[k], U)
        return quad + eta * np.cos(X).sum(axis=1) + eta * np.sin(U).sum(axis=1)

    def cost_x(k, X, U):
        return X @ (0.5 * (s.Q[k] + s.Q[k].T)) - eta * np.sin(X)

    def cost_u(k, X, U):
        return U @ (0.5 * (s.R[k] + s.R[k].T)) + eta * np.cos(U)

    def terminal(X):
        return 0.5 * np.einsum("mi,ij,mj->m", X, s.QN, X) + eta * np.tanh(X).sum(axis=1)

    def terminal_x(X):
        return X @ (0.5 * (s.QN + s.QN.T)) + eta * (1 - np.tanh(X) ** 2)

    if c1 is None:
        c1 = max(
            max(_fro(s.A[k]) + abs(beta) * np.sqrt(n) + (1 + abs(beta)) * _fro(s.B[k]) for k in range(N)),
            max(_fro(s.C[k][i]) + abs(gamma) * np.sqrt(n) + _fro(s.D[k][i])
                for k in range(N) for i in range(d)),
        )
    if c2 is None:
        c2 = max([_fro(q) for q in s.Q] + [_fro(r) for r in s.R] + [_fro(s.QN)]
                 + [abs(eta) * (n + m), abs(eta) * (np.sqrt(n) + np.sqrt(m)), 1e-12])
    return ControlProblem(
        N=N, n=n, m=m, d=d, x0=x0, b=b, sigma=sigma, cost=cost, terminal=terminal,
        b_x=b_x, b_u=b_u, sigma_x=sigma_x, sigma_u=sigma_u,
        cost_x=cost_x, cost_u=cost_u, terminal_x=terminal_x,
        c1=float(c1), c2=float(c2), controls=controls or WholeSpace(),
        initial_set=initial_set, name=name,
        meta={"family": "catalog_nonlinear", "beta": beta, "gamma": gamma, "eta": eta},
    )


def random_linear(rng, N, n, m, d, scale=1.0, **kw) -> ControlProblem:
    """Random LQ instance (used by tests and randomized checks)."""
    A = rng.normal(scale=scale / np.sqrt(n), size=(N, n, n))
    B = rng.normal(scale=scale / np.sqrt(n), size=(N, n, m))
    C = rng.normal(scale=0.5 * scale / np.sqrt(n), size=(N, d, n, n))
    D = rng.normal(scale=0.5 * scale / np.sqrt(n), size=(N, d, n, m))
    Q = np.eye(n)
    R = np.eye(m)
    return linear_quadratic(N, n, m, d, rng.normal(size=n), A, B, Q, R, np.eye(n), C=C, D=D, **kw)

"""Closed cones in R^n with Euclidean projection.

Convex pieces are polyhedral and expose ``constraints() -> (E, F)`` with
``K = {h : E h = 0, F h <= 0}``; unions keep a list of such pieces.
"""
from __future__ import annotations

import itertools

import numpy as np

MEMBER_RTOL = 1e-10


def _rows(*blocks, dim):
    rows = [b for b in blocks if b.size]
    return np.vstack(rows) if rows else np.zeros((0, dim))


class Cone:
    dim: int
    convex = True

    def project(self, h):
        raise NotImplementedError

    def distance(self, h) -> float:
        h = np.asarray(h, float)
        return float(np.linalg.norm(h - self.project(h)))

    def contains(self, h, rtol: float = MEMBER_RTOL) -> bool:
        h = np.asarray(h, float)
        return self.distance(h) <= rtol * np.linalg.norm(h)

    def pieces(self) -> list["Cone"]:
        return [self]

    def constraints(self):
        raise NotImplementedError

    def polar_distance(self, v, iters: int = 5000, tol: float = 1e-13) -> float:
        """Distance from ``v`` to the negative polar cone.

        For a convex cone this is ``||P_K v||``; a union's polar is the
        intersection of its pieces' polars, handled with Dykstra's method.
        """
        v = np.asarray(v, float)
        pieces = self.pieces()
        if len(pieces) == 1:
            return float(np.linalg.norm(pieces[0].project(v)))
        x = v.copy()
        incr = [np.zeros_like(v) for _ in pieces]
        for _ in range(iters):
            x_old = x.copy()
            for j, c in enumerate(pieces):
                y = x + incr[j]
                proj = y - c.project(y)  # projection onto the polar of piece j
                incr[j] = y - proj
                x = proj
            if np.linalg.norm(x - x_old) <= tol * (1 + np.linalg.norm(v)):
                break
        return float(np.linalg.norm(v - x))


class Subspace(Cone):
    """Span of the columns of ``basis`` (orthonormalised)."""

    def __init__(self, basis, dim=None):
        basis = np.asarray(basis, float)
        if basis.ndim == 1:
            basis = basis[:, None]
        self.dim = basis.shape[0] if dim is None else dim
        if basis.size == 0:
            self.Q = np.zeros((self.dim, 0))
        else:
            u, s, _ = np.linalg.svd(basis, full_matrices=False)
            self.Q = u[:, s > 1e-12 * max(1.0, s.max())]

    @classmethod
    def whole(cls, dim):
        return cls(np.eye(dim))

    @classmethod
    def zero(cls, dim):
        return cls(np.zeros((dim, 0)), dim)

    def project(self, h):
        return self.Q @ (self.Q.T @ np.asarray(h, float))

    def constraints(self):
        u, _, _ = np.linalg.svd(self.Q, full_matrices=True)
        comp = u[:, self.Q.shape[1]:]
        return comp.T, np.zeros((0, self.dim))

    def __repr__(self):
        return f"Subspace(dim={self.dim}, rank={self.Q.shape[1]})"


class Halfspace(Cone):
    """``{h : a . h <= 0}``."""

    def __init__(self, normal):
        self.a = np.asarray(normal, float)
        self.dim = self.a.size

    def project(self, h):
        h = np.asarray(h, float)
        t = max(0.0, float(self.a @ h)) / float(self.a @ self.a)
        return h - t * self.a

    def constraints(self):
        return np.zeros((0, self.dim)), self.a[None]


class SignCone(Cone):
    """Product of ``R``, ``R_+``, ``R_-`` and ``{0}`` factors (box tangent cones).

    ``pattern`` entries: 0 free, +1 nonnegative, -1 nonpositive, 2 zero.
    """

    def __init__(self, pattern):
        self.pattern = np.asarray(pattern, int)
        self.dim = self.pattern.size

    def project(self, h):
        h = np.array(h, dtype=float)
        p = self.pattern
        h[p == 1] = np.maximum(h[p == 1], 0.0)
        h[p == -1] = np.minimum(h[p == -1], 0.0)
        h[p == 2] = 0.0
        return h

    def constraints(self):
        eye = np.eye(self.dim)
        p = self.pattern
        return eye[p == 2], _rows(-eye[p == 1], eye[p == -1], dim=self.dim)


class Ray(Cone):
    """``{t u : t >= 0}``."""

    def __init__(self, direction):
        u = np.asarray(direction, float)
        self.u = u / np.linalg.norm(u)
        self.dim = u.size

    def project(self, h):
        return max(0.0, float(self.u @ h)) * self.u

    def constraints(self):
        u, _, _ = np.linalg.svd(self.u[:, None], full_matrices=True)
        return u[:, 1:].T, -self.u[None]


class ProductCone(Cone):
    def __init__(self, factors):
        self.factors = list(factors)
        self.dims = [f.dim for f in self.factors]
        self.dim = sum(self.dims)
        self.convex = all(f.convex for f in self.factors)
        self._splits = np.cumsum(self.dims)[:-1]

    def split(self, h):
        return np.split(np.asarray(h, float), self._splits)

    def project(self, h):
        return np.concatenate([f.project(part) for f, part in zip(self.factors, self.split(h))])

    def pieces(self):
        if self.convex:
            return [self]
        combos = itertools.product(*[f.pieces() for f in self.factors])
        return [ProductCone(c) for c in combos]

    def constraints(self):
        Es, Fs = [], []
        for f in self.factors:
            E, F = f.constraints()
            Es.append(E)
            Fs.append(F)
        return _block_diag(Es, self.dims), _block_diag(Fs, self.dims)


def _block_diag(mats, dims):
    rows = sum(m.shape[0] for m in mats)
    out = np.zeros((rows, sum(dims)))
    r = c = 0
    for m, dd in zip(mats, dims):
        out[r:r + m.shape[0], c:c + dd] = m
        r += m.shape[0]
        c += dd
    return out


class UnionCone(Cone):
    """Finite union of convex cones; projection goes to the nearest member
    (lowest index on ties)."""

    convex = False

    def __init__(self, members):
        flat = []
        for m in members:
            flat.extend(m.pieces())
        self.members = flat
        self.dim = flat[0].dim
        if len(flat) == 1:
            self.convex = True

    def project(self, h):
        h = np.asarray(h, float)
        best, best_d = None, np.inf
        for m in self.members:
            p = m.project(h)
            dist = np.linalg.norm(h - p)
            if dist < best_d - 1e-15:
                best, best_d = p, dist
        return best

    def pieces(self):
        return list(self.members)

    def constraints(self):
        if len(self.members) == 1:
            return self.members[0].constraints()
        raise TypeError("a union of cones has no single polyhedral description")

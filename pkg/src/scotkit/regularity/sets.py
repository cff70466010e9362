"""Catalog of closed sets with exact distances, nearest points and contingent cones.

Products use the sum norm ``||(x, y)|| = ||x|| + ||y||``; every other distance
is Euclidean. Ties between equally near candidates go to the lowest variant
index, then to the lexicographically smallest point.
"""
from __future__ import annotations

import numpy as np

from . import cones

MEMBER_TOL = 1e-10

# variant order used for tie-breaking
VARIANTS = ("whole", "box", "affine", "ball", "arc", "line", "union", "product")


class NotInSetError(ValueError):
    pass


class CatalogSet:
    variant = "abstract"
    convex = True
    dim: int | None

    @property
    def variant_index(self) -> int:
        return VARIANTS.index(self.variant)

    def nearest(self, z) -> np.ndarray:
        raise NotImplementedError

    def distance(self, z) -> tuple[float, np.ndarray]:
        z = np.asarray(z, float)
        p = self.nearest(z)
        return float(np.linalg.norm(z - p)), p

    def dist(self, z) -> float:
        return self.distance(z)[0]

    def contains(self, z, tol: float = MEMBER_TOL) -> bool:
        return self.dist(z) <= tol

    def contingent_cone(self, z) -> cones.Cone:
        z = np.asarray(z, float)
        if not self.contains(z):
            raise NotInSetError(f"{self!r} does not contain {z.tolist()}")
        return self._cone(z)

    def normal_distance(self, z, v) -> float:
        """Distance of ``v`` to the polar of the contingent cone at ``z``."""
        return self.contingent_cone(z).polar_distance(v)

    def translate(self, y) -> "CatalogSet":
        raise NotImplementedError

    def _cone(self, z):
        raise NotImplementedError

    def describe(self) -> dict:
        raise NotImplementedError


def _dim_of(z):
    return np.asarray(z).size


class WholeSpace(CatalogSet):
    variant = "whole"

    def __init__(self, dim=None):
        self.dim = dim

    def nearest(self, z):
        return np.array(z, dtype=float)

    def _cone(self, z):
        return cones.Subspace.whole(_dim_of(z))

    def translate(self, y):
        return self

    def describe(self):
        return {"kind": "whole", "dim": self.dim}

    def __repr__(self):
        return "WholeSpace()"


class Box(CatalogSet):
    variant = "box"

    def __init__(self, lower, upper):
        self.lower = np.atleast_1d(np.asarray(lower, float))
        self.upper = np.atleast_1d(np.asarray(upper, float))
        if np.any(self.lower > self.upper):
            raise ValueError("empty box")
        self.dim = self.lower.size

    def nearest(self, z):
        return np.clip(z, self.lower, self.upper)

    def _cone(self, z):
        at_lo = np.abs(z - self.lower) <= MEMBER_TOL
        at_hi = np.abs(z - self.upper) <= MEMBER_TOL
        pattern = np.where(at_lo & at_hi, 2, np.where(at_lo, 1, np.where(at_hi, -1, 0)))
        return cones.SignCone(pattern)

    def translate(self, y):
        return Box(self.lower + y, self.upper + y)

    def describe(self):
        return {"kind": "box", "lower": self.lower.tolist(), "upper": self.upper.tolist()}

    def __repr__(self):
        return f"Box({self.lower.tolist()}, {self.upper.tolist()})"


class Affine(CatalogSet):
    """``{x : A x = b}`` (assumed consistent)."""

    variant = "affine"

    def __init__(self, A, b):
        self.A = np.atleast_2d(np.asarray(A, float))
        self.b = np.atleast_1d(np.asarray(b, float))
        self.dim = self.A.shape[1]
        self._pinv = np.linalg.pinv(self.A)
        if np.linalg.norm(self.A @ (self._pinv @ self.b) - self.b) > 1e-9 * (1 + np.linalg.norm(self.b)):
            raise ValueError("inconsistent affine constraints")

    def nearest(self, z):
        z = np.asarray(z, float)
        return z - self._pinv @ (self.A @ z - self.b)

    def _cone(self, z):
        _, s, vt = np.linalg.svd(self.A)
        rank = int(np.sum(s > 1e-12 * max(1.0, s.max() if s.size else 1.0)))
        return cones.Subspace(vt[rank:].T, self.dim)

    def translate(self, y):
        return Affine(self.A, self.b + self.A @ y)

    def describe(self):
        return {"kind": "affine", "A": self.A.tolist(), "b": self.b.tolist()}


class Ball(CatalogSet):
    """Closed Euclidean ball; ``radius=0`` is a single point."""

    variant = "ball"

    def __init__(self, center, radius):
        self.center = np.atleast_1d(np.asarray(center, float))
        self.radius = float(radius)
        if self.radius < 0:
            raise ValueError("negative radius")
        self.dim = self.center.size

    @classmethod
    def point(cls, p):
        return cls(p, 0.0)

    def nearest(self, z):
        diff = np.asarray(z, float) - self.center
        nrm = np.linalg.norm(diff)
        if nrm <= self.radius:
            return np.array(z, dtype=float)
        return self.center + diff * (self.radius / nrm)

    def _cone(self, z):
        diff = z - self.center
        if self.radius == 0.0:
            return cones.Subspace.zero(self.dim)
        if np.linalg.norm(diff) < self.radius - MEMBER_TOL:
            return cones.Subspace.whole(self.dim)
        return cones.Halfspace(diff)

    def translate(self, y):
        return Ball(self.center + y, self.radius)

    def describe(self):
        return {"kind": "ball", "center": self.center.tolist(), "radius": self.radius}

    def __repr__(self):
        return f"Ball({self.center.tolist()}, {self.radius})"


class Arc(CatalogSet):
    """Sphere ``|z - c| = R``; in 2-D optionally restricted to the angles
    ``[theta_lo, theta_hi]`` (counter-clockwise from the x axis)."""

    variant = "arc"
    convex = False

    def __init__(self, center, radius, theta_lo=None, theta_hi=None):
        self.center = np.atleast_1d(np.asarray(center, float))
        self.radius = float(radius)
        self.dim = self.center.size
        self.full = theta_lo is None
        if not self.full:
            if self.dim != 2:
                raise ValueError("angular arcs are 2-D only")
            if not theta_lo < theta_hi <= theta_lo + 2 * np.pi:
                raise ValueError("need theta_lo < theta_hi <= theta_lo + 2 pi")
            self.theta_lo, self.theta_hi = float(theta_lo), float(theta_hi)

    @classmethod
    def half_circle(cls, center, radius, side="right"):
        """Part of the circle with ``x >= center_x`` (``side='right'``)."""
        if side == "right":
            return cls(center, radius, -np.pi / 2, np.pi / 2)
        return cls(center, radius, np.pi / 2, 3 * np.pi / 2)

    def point_at(self, theta):
        return self.center + self.radius * np.array([np.cos(theta), np.sin(theta)])

    def _angle_in(self, theta, tol=0.0):
        t = self.theta_lo + np.mod(theta - self.theta_lo, 2 * np.pi)
        if t <= self.theta_hi + tol:
            return True, t
        # just below theta_lo wraps to near theta_lo + 2 pi
        if t >= self.theta_lo + 2 * np.pi - tol:
            return True, t - 2 * np.pi
        return False, t

    def endpoints(self):
        return self.point_at(self.theta_lo), self.point_at(self.theta_hi)

    def nearest(self, z):
        z = np.asarray(z, float)
        diff = z - self.center
        nrm = np.linalg.norm(diff)
        if nrm == 0.0:
            if self.full:
                e = np.zeros(self.dim)
                e[0] = -1.0  # lexicographically smallest point of the sphere
                return self.center + self.radius * e
            cands = [self.point_at(self.theta_lo), self.point_at(self.theta_hi)]
            return min(cands, key=lambda p: tuple(p))
        radial = self.center + diff * (self.radius / nrm)
        if self.full:
            return radial
        inside, _ = self._angle_in(np.arctan2(diff[1], diff[0]))
        cands = ([radial] if inside else []) + list(self.endpoints())
        dists = [np.linalg.norm(z - c) for c in cands]
        best = min(dists)
        ties = [c for c, dd in zip(cands, dists) if dd <= best + 1e-15]
        return min(ties, key=lambda p: tuple(p))

    def _cone(self, z):
        diff = z - self.center
        if self.radius == 0.0:
            return cones.Subspace.zero(self.dim)
        if self.full or self.dim != 2:
            # tangent hyperplane
            u, _, _ = np.linalg.svd(diff[:, None], full_matrices=True)
            return cones.Subspace(u[:, 1:], self.dim)
        theta = np.arctan2(diff[1], diff[0])
        tangent = np.array([-np.sin(theta), np.cos(theta)])
        lo, hi = self.endpoints()
        at_lo = np.linalg.norm(z - lo) <= MEMBER_TOL
        at_hi = np.linalg.norm(z - hi) <= MEMBER_TOL
        if at_lo and at_hi:  # full turn minus nothing: both ends coincide
            return cones.Subspace(tangent)
        if at_lo:
            return cones.Ray(tangent)
        if at_hi:
            return cones.Ray(-tangent)
        return cones.Subspace(tangent)

    def translate(self, y):
        if self.full:
            return Arc(self.center + y, self.radius)
        return Arc(self.center + y, self.radius, self.theta_lo, self.theta_hi)

    def describe(self):
        out = {"kind": "arc", "center": self.center.tolist(), "radius": self.radius}
        if not self.full:
            out.update(theta_lo=self.theta_lo, theta_hi=self.theta_hi)
        return out

    def __repr__(self):
        rng = "" if self.full else f", [{self.theta_lo:.4g}, {self.theta_hi:.4g}]"
        return f"Arc({self.center.tolist()}, {self.radius}{rng})"


def Sphere(center, radius):
    return Arc(center, radius)


class Line(CatalogSet):
    """``{p + t u : t in R}``."""

    variant = "line"

    def __init__(self, point, direction):
        self.point = np.atleast_1d(np.asarray(point, float))
        u = np.atleast_1d(np.asarray(direction, float))
        self.u = u / np.linalg.norm(u)
        self.dim = self.point.size

    def nearest(self, z):
        z = np.asarray(z, float)
        return self.point + float(self.u @ (z - self.point)) * self.u

    def _cone(self, z):
        return cones.Subspace(self.u)

    def translate(self, y):
        return Line(self.point + y, self.u)

    def describe(self):
        return {"kind": "line", "point": self.point.tolist(), "direction": self.u.tolist()}

    def __repr__(self):
        return f"Line({self.point.tolist()}, {self.u.tolist()})"


class Union(CatalogSet):
    variant = "union"
    convex = False

    def __init__(self, members):
        self.members = list(members)
        if not self.members:
            raise ValueError("empty union")
        self.dim = self.members[0].dim

    def distance(self, z):
        z = np.asarray(z, float)
        found = [m.distance(z) + (m,) for m in self.members]
        best = min(dd for dd, _, _ in found)
        ties = [(m.variant_index, tuple(p), p) for dd, p, m in found if dd <= best + 1e-15]
        ties.sort(key=lambda t: (t[0], t[1]))
        return float(best), ties[0][2]

    def nearest(self, z):
        return self.distance(z)[1]

    def _cone(self, z):
        active = [m for m in self.members if m.contains(z)]
        cs = [m.contingent_cone(z) for m in active]
        return cs[0] if len(cs) == 1 else cones.UnionCone(cs)

    def translate(self, y):
        return Union([m.translate(y) for m in self.members])

    def describe(self):
        return {"kind": "union", "members": [m.describe() for m in self.members]}

    def __repr__(self):
        return f"Union({self.members!r})"


class Product(CatalogSet):
    """Cartesian product with the sum norm on the factors."""

    variant = "product"

    def __init__(self, factors, dims=None):
        self.factors = list(factors)
        dims = dims or [f.dim for f in self.factors]
        if any(dd is None for dd in dims):
            raise ValueError("product factors need explicit dimensions")
        self.dims = list(dims)
        self.dim = sum(self.dims)
        self.convex = all(f.convex for f in self.factors)
        self._splits = np.cumsum(self.dims)[:-1]

    def split(self, z):
        return np.split(np.asarray(z, float), self._splits)

    def distance(self, z):
        parts = [f.distance(p) for f, p in zip(self.factors, self.split(z))]
        return float(sum(dd for dd, _ in parts)), np.concatenate([p for _, p in parts])

    def nearest(self, z):
        return self.distance(z)[1]

    def _cone(self, z):
        return cones.ProductCone([f.contingent_cone(p) for f, p in zip(self.factors, self.split(z))])

    def translate(self, y):
        return Product([f.translate(p) for f, p in zip(self.factors, self.split(y))], self.dims)

    def describe(self):
        return {"kind": "product", "factors": [f.describe() for f in self.factors], "dims": self.dims}


def distance(s: CatalogSet, z):
    """``(d, nearest)`` for a catalog set."""
    return s.distance(z)


def contingent_cone(s: CatalogSet, z) -> cones.Cone:
    return s.contingent_cone(z)


def from_descriptor(desc: dict, dim: int | None = None) -> CatalogSet:
    kind = desc.get("kind")
    if kind == "whole":
        return WholeSpace(desc.get("dim", dim))
    if kind == "box":
        lo = np.broadcast_to(np.asarray(desc["lower"], float), (dim,) if dim else np.shape(desc["lower"]))
        hi = np.broadcast_to(np.asarray(desc["upper"], float), lo.shape)
        return Box(lo, hi)
    if kind == "affine":
        return Affine(desc["A"], desc["b"])
    if kind == "ball":
        return Ball(desc["center"], desc["radius"])
    if kind == "point":
        return Ball.point(desc["point"])
    if kind in ("arc", "sphere"):
        return Arc(desc["center"], desc["radius"], desc.get("theta_lo"), desc.get("theta_hi"))
    if kind == "line":
        return Line(desc["point"], desc["direction"])
    if kind == "union":
        return Union([from_descriptor(m, dim) for m in desc["members"]])
    if kind == "product":
        return Product([from_descriptor(f) for f in desc["factors"]], desc.get("dims"))
    raise ValueError(f"unknown set kind {kind!r}")


# -- exact intersections of planar curves -----------------------------------

def _curve_pieces(s):
    if isinstance(s, Union):
        out = []
        for m in s.members:
            out.extend(_curve_pieces(m))
        return out
    if isinstance(s, (Arc, Line)) or (isinstance(s, Ball) and s.radius == 0.0):
        if s.dim != 2:
            raise TypeError("curve intersection is 2-D only")
        return [s]
    raise TypeError(f"{s!r} is not a planar curve")


def is_planar_curve(s) -> bool:
    try:
        _curve_pieces(s)
        return True
    except TypeError:
        return False


def _circle_line(c, R, p, u):
    # |p + t u - c| = R
    w = p - c
    bq = float(u @ w)
    disc = bq * bq - (float(w @ w) - R * R)
    if disc < -1e-12:
        return []
    disc = max(disc, 0.0)
    ts = {-bq - np.sqrt(disc), -bq + np.sqrt(disc)}
    return [p + t * u for t in sorted(ts)]


def _circle_circle(c1, r1, c2, r2):
    dvec = c2 - c1
    dd = float(np.linalg.norm(dvec))
    if dd == 0.0:
        if abs(r1 - r2) <= 1e-14:
            raise ValueError("coincident circles")
        return []
    a = (dd * dd + r1 * r1 - r2 * r2) / (2 * dd)
    h2 = r1 * r1 - a * a
    if h2 < -1e-12 * max(1.0, r1 * r1):
        return []
    h = np.sqrt(max(h2, 0.0))
    e = dvec / dd
    perp = np.array([-e[1], e[0]])
    base = c1 + a * e
    return [base] if h == 0.0 else [base - h * perp, base + h * perp]


def _pair(a, b):
    if isinstance(a, Ball):
        return [a.center] if b.contains(a.center, 1e-9) else []
    if isinstance(b, Ball):
        return _pair(b, a)
    if isinstance(a, Line) and isinstance(b, Line):
        mat = np.column_stack([a.u, -b.u])
        if abs(np.linalg.det(mat)) < 1e-14:
            if a.contains(b.point, 1e-12):
                raise ValueError("coincident lines")
            return []
        t = np.linalg.solve(mat, b.point - a.point)
        return [a.point + t[0] * a.u]
    if isinstance(a, Line):
        a, b = b, a
    if isinstance(b, Line):
        pts = _circle_line(a.center, a.radius, b.point, b.u)
    else:
        pts = _circle_circle(a.center, a.radius, b.center, b.radius)
    return [q for q in pts if a.contains(q, 1e-9) and b.contains(q, 1e-9)]


def intersect_curves(s1: CatalogSet, s2: CatalogSet) -> np.ndarray:
    """All intersection points of two planar curve sets (arcs, lines, points
    and unions of them). Raises ``ValueError`` when pieces overlap."""
    pts = []
    for a in _curve_pieces(s1):
        for b in _curve_pieces(s2):
            pts.extend(_pair(a, b))
    uniq = []
    for q in pts:
        if all(np.linalg.norm(q - r) > 1e-12 for r in uniq):
            uniq.append(np.asarray(q, float))
    return np.array(uniq).reshape(-1, 2)

"""Calmness, metric regularity, qualification and multiplier checks for
finite-dimensional constraint systems ``g(x) in D, x in C``.

Every report carries the seed it sampled with and the method used for the
feasible-set distance, which is the one quantity that is not always exact:

``exact-declared``   user supplied closed form
``exact-catalog``    ``g`` is the identity and one of the sets is the whole space
``exact-curves``     ``g`` is the identity and both sets are planar curves
``exact-affine``     ``g`` affine, ``C`` whole space, ``D`` a point
``exact-convex``     ``g`` affine, ``C`` and ``D`` convex (conic solve)
``gauss-newton``     multistart projected Gauss-Newton (8 seeded starts)
"""
from __future__ import annotations

import functools
import itertools
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import cones
from .sets import (Affine, Arc, Ball, Box, CatalogSet, Line, Product, Union,
                   WholeSpace, intersect_curves, is_planar_curve)

FEAS_TOL = 1e-10
MULTIPLIER_TOL = 1e-8
DIVERGE_LIMIT = 1e6
N_STARTS = 8


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based generator so that reports are reproducible from the seed."""
    return np.random.Generator(np.random.Philox(int(seed)))


def _unit_sphere(rng, count, dim):
    v = rng.standard_normal((count, dim))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _in_ball(rng, count, dim, radius):
    dirs = _unit_sphere(rng, count, dim)
    rad = radius * rng.random(count) ** (1.0 / dim)
    return dirs * rad[:, None]


def _floats(obj):
    """Convert numpy scalars/arrays to plain Python for JSON records."""
    if isinstance(obj, dict):
        return {k: _floats(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_floats(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _floats(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


@dataclass
class LabReport:
    name: str
    passed: bool
    values: dict
    seed: Optional[int] = None
    method: Optional[str] = None
    provenance: str = "sampled"

    def record(self) -> dict:
        return _floats({"name": self.name, "passed": self.passed, "seed": self.seed,
                        "method": self.method, "provenance": self.provenance, **self.values})


# -- constraint systems ------------------------------------------------------

@dataclass
class ConstraintSystem:
    """``g: R^p -> R^q`` with sets ``C`` (domain) and ``D`` (range).

    ``affine = (G, c)`` marks ``g(x) = G x + c``; identity systems set
    ``identity=True``. ``feasible_distance`` optionally overrides the solver
    with a closed form ``(x, y) -> (dist, nearest)`` for the set
    ``{x' in C : g(x') - y in D}``.
    """

    p: int
    q: int
    g: Callable
    jac_g: Callable
    C: CatalogSet
    D: CatalogSet
    x0: np.ndarray
    f: Optional[Callable] = None
    grad_f: Optional[Callable] = None
    K_f: Optional[float] = None
    K_g: Optional[float] = None
    a: Optional[float] = None
    alpha: Optional[float] = None
    alpha1: Optional[float] = None
    alpha2: Optional[float] = None
    r: Optional[float] = None
    affine: Optional[tuple] = None
    identity: bool = False
    feasible_distance: Optional[Callable] = None
    name: str = "system"

    def __post_init__(self):
        self.x0 = np.atleast_1d(np.asarray(self.x0, float))

    @classmethod
    def identity_map(cls, C, D, x0, **kw):
        dim = np.size(x0)
        eye = np.eye(dim)
        return cls(dim, dim, lambda x: np.asarray(x, float), lambda x: eye, C, D, x0,
                   affine=(eye, np.zeros(dim)), identity=True, K_g=1.0, **kw)

    @classmethod
    def linear(cls, G, c, C, D, x0, **kw):
        G = np.atleast_2d(np.asarray(G, float))
        c = np.zeros(G.shape[0]) if c is None else np.asarray(c, float)
        kw.setdefault("K_g", float(np.linalg.norm(G, 2)))
        return cls(G.shape[1], G.shape[0], lambda x: G @ x + c, lambda x: G, C, D, x0,
                   affine=(G, c), **kw)

    def check_base_point(self, tol=FEAS_TOL):
        dc = self.C.dist(self.x0)
        dd = self.D.dist(self.g(self.x0))
        if dc > tol or dd > tol:
            raise ValueError(f"base point is not feasible: d_C = {dc:.3g}, d_D(g) = {dd:.3g}")


# -- feasible-set distance ---------------------------------------------------

class FeasibleDistance:
    """Distance from ``x`` to ``{x' in C : g(x') - y in D'}``."""

    def __init__(self, sys: ConstraintSystem, seed: int = 0):
        self.sys = sys
        self.seed = seed
        self.failures = 0
        self._cvx_cache = {}

    def method(self, y=None, D=None) -> str:
        s = self.sys
        D = s.D if D is None else D
        if s.feasible_distance is not None and D is s.D:
            return "exact-declared"
        if s.identity:
            if isinstance(s.C, WholeSpace) or isinstance(D, WholeSpace):
                return "exact-catalog"
            if is_planar_curve(s.C) and is_planar_curve(D):
                return "exact-curves"
            if _is_point(D) or _is_point(s.C):
                return "exact-catalog"
        if s.affine is not None:
            if isinstance(s.C, WholeSpace) and _is_point(D):
                return "exact-affine"
            if s.C.convex and D.convex and _cvx_ok(s.C) and _cvx_ok(D):
                return "exact-convex"
        return "gauss-newton"

    def __call__(self, x, y=None, D=None):
        """Return ``(dist, nearest)``; ``nearest`` is ``None`` when no feasible
        point was found (counted in ``failures``)."""
        s = self.sys
        x = np.asarray(x, float)
        y = np.zeros(s.q) if y is None else np.asarray(y, float)
        D = s.D if D is None else D
        Dy = D.translate(y) if np.any(y) else D
        m = self.method(y, D)
        if s.C.dist(x) == 0.0 and Dy.dist(s.g(x)) == 0.0:
            return 0.0, x
        if m == "exact-declared":
            return s.feasible_distance(x, y)
        if m == "exact-catalog":
            if isinstance(s.C, WholeSpace):
                return Dy.distance(x)
            if isinstance(Dy, WholeSpace):
                return s.C.distance(x)
            pt_set, other = (Dy, s.C) if _is_point(Dy) else (s.C, Dy)
            pt = pt_set.center
            if other.contains(pt, 1e-9):
                return float(np.linalg.norm(x - pt)), pt
            return np.inf, None
        if m == "exact-curves":
            pts = intersect_curves(s.C, Dy)
            if len(pts) == 0:
                return np.inf, None
            dist = np.linalg.norm(pts - x, axis=1)
            j = int(np.argmin(dist))
            return float(dist[j]), pts[j]
        if m == "exact-affine":
            G, c = s.affine
            target = Dy.center
            nearest = x - np.linalg.pinv(G) @ (G @ x + c - target)
            if np.linalg.norm(G @ nearest + c - target) > 1e-9 * (1 + np.linalg.norm(target)):
                return np.inf, None
            return float(np.linalg.norm(x - nearest)), nearest
        if m == "exact-convex":
            return self._convex(x, y, D)
        return self._gauss_newton(x, Dy)

    def _convex(self, x, y, D):
        """Projection onto ``{z in C : G z + c - y in D}``; the conic problem is
        compiled once per ``D`` with ``x`` and ``y`` as parameters."""
        import cvxpy as cp

        key = id(D)
        if key not in self._cvx_cache:
            G, c = self.sys.affine
            z = cp.Variable(self.sys.p)
            xp, yp = cp.Parameter(self.sys.p), cp.Parameter(self.sys.q)
            cons = cvx_membership(self.sys.C, z) + cvx_membership(D, G @ z + c - yp)
            self._cvx_cache[key] = (cp.Problem(cp.Minimize(cp.norm(z - xp, 2)), cons), z, xp, yp, D)
        prob, z, xp, yp, _ = self._cvx_cache[key]
        xp.value, yp.value = x, y
        _solve(prob)
        if prob.status not in ("optimal", "optimal_inaccurate") or z.value is None:
            self.failures += 1
            return np.inf, None
        zv = np.asarray(z.value, float)
        return float(np.linalg.norm(zv - x)), zv

    def _gauss_newton(self, x, Dy, iters=200, tol=1e-12):
        s = self.sys
        rng = make_rng(self.seed)
        scale = max(Dy.dist(s.g(x)), 1e-3)
        starts = [x] + [x + scale * v for v in rng.standard_normal((N_STARTS - 1, s.p))]
        best, best_pt = np.inf, None
        for z in starts:
            z = s.C.nearest(z)
            ok = False
            for _ in range(iters):
                gz = s.g(z)
                r = Dy.nearest(gz) - gz
                J = np.atleast_2d(s.jac_g(z))
                Jp = np.linalg.pinv(J)
                step = Jp @ r + (np.eye(s.p) - Jp @ J) @ (x - z)
                z_new = s.C.nearest(z + step)
                if np.linalg.norm(z_new - z) <= tol * (1 + np.linalg.norm(z)):
                    z = z_new
                    ok = True
                    break
                z = z_new
            feasible = Dy.dist(s.g(z)) <= 1e-9 and s.C.dist(z) <= 1e-9
            if ok or feasible:
                if feasible:
                    dist = float(np.linalg.norm(x - z))
                    if dist < best:
                        best, best_pt = dist, z
        if best_pt is None:
            self.failures += 1
        return best, best_pt


def _is_point(s):
    return isinstance(s, Ball) and s.radius == 0.0


def _cvx_ok(s):
    if isinstance(s, Product):
        return all(_cvx_ok(f) for f in s.factors)
    return isinstance(s, (WholeSpace, Box, Affine, Ball, Line))


def cvx_membership(s: CatalogSet, expr) -> list:
    """cvxpy constraints for ``expr in s`` (convex catalog sets only)."""
    import cvxpy as cp

    if isinstance(s, WholeSpace):
        return []
    if isinstance(s, Box):
        out = []
        if np.all(np.isfinite(s.lower)):
            out.append(expr >= s.lower)
        elif np.any(np.isfinite(s.lower)):
            idx = np.flatnonzero(np.isfinite(s.lower))
            out.append(expr[idx] >= s.lower[idx])
        if np.all(np.isfinite(s.upper)):
            out.append(expr <= s.upper)
        elif np.any(np.isfinite(s.upper)):
            idx = np.flatnonzero(np.isfinite(s.upper))
            out.append(expr[idx] <= s.upper[idx])
        return out
    if isinstance(s, Affine):
        return [s.A @ expr == s.b]
    if isinstance(s, Ball):
        if s.radius == 0.0:
            return [expr == s.center]
        return [cp.norm(expr - s.center, 2) <= s.radius]
    if isinstance(s, Line):
        t = cp.Variable()
        return [expr == s.point + t * s.u]
    if isinstance(s, Product):
        out, start = [], 0
        for f, dd in zip(s.factors, s.dims):
            out += cvx_membership(f, expr[start:start + dd])
            start += dd
        return out
    raise TypeError(f"{s!r} has no convex description")


@functools.lru_cache(maxsize=None)
def _solvers():
    import cvxpy as cp

    installed = cp.installed_solvers()
    return tuple(s for s in ("CLARABEL", "ECOS", "SCS") if s in installed)


def _solve(prob):
    """Solve with the first installed conic solver; later ones are only tried
    after a solver error or an inconclusive status."""
    import cvxpy as cp

    for solver in _solvers():
        try:
            prob.solve(solver=solver)
        except cp.error.SolverError:
            continue
        if prob.status in ("optimal", "optimal_inaccurate", "infeasible", "unbounded"):
            return prob.status
    return prob.status


def truncated_distance(D: CatalogSet, z, center, radius) -> float:
    """``d_{D cap B(center, radius)}(z)``.

    Exact for planar curve sets (candidates: free nearest points inside the
    ball, arc end points, intersections with the bounding circle) and for
    convex catalog sets (conic solve).
    """
    z = np.asarray(z, float)
    center = np.asarray(center, float)
    d_free, near = D.distance(z)
    if np.linalg.norm(near - center) <= radius:
        # the unconstrained nearest point already lies in the ball
        return float(d_free)
    if is_planar_curve(D) and z.size == 2:
        from .sets import _curve_pieces

        cands = []
        for piece in _curve_pieces(D):
            cands.append(piece.nearest(z))
            if isinstance(piece, Arc) and not piece.full:
                cands.extend(piece.endpoints())
        cands.extend(intersect_curves(D, Arc(center, radius)))
        inside = [c for c in cands if np.linalg.norm(c - center) <= radius * (1 + 1e-12)
                  and D.contains(c, 1e-9)]
        if not inside:
            return np.inf
        return float(min(np.linalg.norm(z - c) for c in inside))
    if D.convex and _cvx_ok(D):
        import cvxpy as cp

        v = cp.Variable(z.size)
        prob = cp.Problem(cp.Minimize(cp.norm(v - z, 2)),
                          cvx_membership(D, v) + [cp.norm(v - center, 2) <= radius])
        _solve(prob)
        return float(prob.value) if v.value is not None else np.inf
    raise TypeError(f"truncated distance not available for {D!r}")


# -- Dini quotients and cones --------------------------------------------------

TAUS = 2.0 ** -np.arange(4, 21)


def dini_quotients(dist: Callable, x, h, taus=TAUS):
    """``d(x + tau h) / tau`` along the tau sequence."""
    x = np.asarray(x, float)
    h = np.asarray(h, float)
    return np.array([dist(x + t * h) / t for t in taus])


def lower_dini(dist: Callable, x, h, taus=TAUS) -> float:
    """Estimator of the lower Dini derivative: minimum over the tau sequence."""
    return float(dini_quotients(dist, x, h, taus).min())


def _sample_in_cone(K: cones.Cone, rng, count):
    out = []
    pieces = K.pieces()
    for j in range(count):
        piece = pieces[j % len(pieces)]
        for _ in range(20):
            v = piece.project(rng.standard_normal(K.dim))
            nrm = np.linalg.norm(v)
            if nrm > 1e-12:
                out.append(v / nrm)
                break
        else:
            out.append(np.zeros(K.dim))
    return np.array(out).reshape(count, K.dim)


def check_product_cone(A: CatalogSet, B: CatalogSet, x0, y0, samples=200, seed=0,
                       member_tol=1e-4) -> LabReport:
    """Compare the contingent cone of ``A x B`` (estimated by Dini quotients of
    the sum-norm distance) with ``K(A) x K(B)`` (exact)."""
    x0 = np.asarray(x0, float)
    y0 = np.asarray(y0, float)
    rng = make_rng(seed)
    KA, KB = A.contingent_cone(x0), B.contingent_cone(y0)
    P = cones.ProductCone([KA, KB])
    pa = x0.size
    regular = A.convex or B.convex

    def dist_prod(zz):
        return A.dist(zz[:pa]) + B.dist(zz[pa:])

    half = samples // 2
    dirs = np.vstack([
        _unit_sphere(rng, samples - half, P.dim),
        np.hstack([_sample_in_cone(KA, rng, half), _sample_in_cone(KB, rng, half)]),
    ])
    base = np.concatenate([x0, y0])
    inclusion_bad = equality_bad = lower_bound_bad = sum_bad = regular_bad = 0
    worst = None
    for hk in dirs:
        nrm = np.linalg.norm(hk[:pa]) + np.linalg.norm(hk[pa:])
        if nrm == 0:
            continue
        hk = hk / nrm
        h, k = hk[:pa], hk[pa:]
        q_prod = lower_dini(dist_prod, base, hk)
        in_prod_est = q_prod <= member_tol
        in_factor = KA.contains(h, 1e-9) and KB.contains(k, 1e-9)
        if in_prod_est and not in_factor:
            inclusion_bad += 1
            worst = hk
        if regular and in_factor and not in_prod_est:
            equality_bad += 1
            worst = hk
        # quotient is bounded below by the (sum-norm) distance to the cone
        cone_gap = KA.distance(h) + KB.distance(k)
        if q_prod < 0.9 * cone_gap - 1e-9:
            lower_bound_bad += 1
        dA = lower_dini(A.dist, x0, h)
        dB = lower_dini(B.dist, y0, k)
        # inequality with the lower Dini derivative on both factors
        if q_prod > dA + dB + 1e-6:
            sum_bad += 1
        if regular and q_prod > cone_gap + 1e-6:
            regular_bad += 1
    passed = inclusion_bad == 0 and (not regular or equality_bad == 0) and lower_bound_bad == 0
    return LabReport(
        "product_cone", passed,
        {"samples": int(len(dirs)), "inclusion_violations": inclusion_bad,
         "equality_checked": regular, "equality_violations": equality_bad if regular else None,
         "lower_bound_violations": lower_bound_bad,
         "dini_sum_violations": sum_bad,
         "dini_sum_note": "checked with the lower Dini derivative on both factors",
         "regular_bound_violations": regular_bad if regular else None,
         "worst_direction": worst, "tau": [2.0 ** -4, 2.0 ** -20], "member_tol": member_tol},
        seed=seed, method="dini-estimate", provenance="estimated")


# -- calmness -----------------------------------------------------------------

def _sample_C(sys, rng, count, radius):
    pts = sys.x0 + _in_ball(rng, count, sys.p, radius)
    out = []
    for z in pts:
        c = sys.C.nearest(z)
        if np.linalg.norm(c - sys.x0) <= radius * (1 + 1e-12):
            out.append(c)
    return np.array(out).reshape(-1, sys.p)


@dataclass
class CalmnessEstimate:
    a_hat: float
    diverging: bool
    witnesses: list
    levels: list
    excluded: int
    method: str
    seed: int

    def record(self):
        return _floats({"a_hat": self.a_hat, "diverging": self.diverging,
                        "witnesses": self.witnesses, "levels": self.levels,
                        "excluded": self.excluded, "method": self.method, "seed": self.seed})


def calmness_ratios(sys: ConstraintSystem, points, fd: FeasibleDistance | None = None):
    """Ratios ``d_{g^{-1}(D) cap C}(x) / d_D(g(x))`` (``nan`` for feasible points)."""
    fd = fd or FeasibleDistance(sys)
    out = []
    for x in points:
        dd = sys.D.dist(sys.g(x))
        if dd == 0.0:
            # x in C with g(x) in D is feasible: no information
            out.append(np.nan)
            continue
        df, near = fd(x)
        if near is None or df <= 1e-14 * (1.0 + np.linalg.norm(x)):
            # solver failure, or x feasible up to rounding
            out.append(np.nan)
        else:
            out.append(df / dd)
    return np.array(out)


def estimate_calmness(sys: ConstraintSystem, radius=1.0, samples=200, seed=0,
                      refinements=24, limit=DIVERGE_LIMIT, min_refinements=8) -> CalmnessEstimate:
    """Sampled calmness constant on ``B_C(x0, radius / 2^j)`` for ``j = 0, 1, ...``.

    The estimate is the largest ratio seen; ``diverging`` is raised as soon as
    it exceeds ``limit`` (the refinement then stops). Refinement otherwise ends
    once the level maxima stop growing, but never before ``min_refinements``
    halvings: one lucky sample near ``x0`` must not mask a blow-up.
    """
    sys.check_base_point()
    rng = make_rng(seed)
    fd = FeasibleDistance(sys, seed)
    a_hat, diverging = 0.0, False
    witnesses, levels = [], []
    excluded = 0
    for j in range(refinements + 1):
        s = radius / 2.0 ** j
        pts = _sample_C(sys, rng, samples, s)
        before = fd.failures
        ratios = calmness_ratios(sys, pts, fd)
        excluded += fd.failures - before
        finite = np.where(np.isnan(ratios), -np.inf, ratios)
        if finite.size == 0 or np.all(finite == -np.inf):
            levels.append({"radius": s, "max_ratio": None})
            continue
        i = int(np.argmax(finite))
        level_max = float(finite[i])
        levels.append({"radius": s, "max_ratio": level_max})
        witnesses.append({"x": pts[i], "ratio": level_max, "radius": s})
        a_hat = max(a_hat, level_max)
        if a_hat > limit:
            diverging = True
            break
        # no growth under refinement: a finite constant has been resolved
        if j >= max(min_refinements, 3) and all(lv["max_ratio"] is not None and lv["max_ratio"] <= a_hat * (1 + 1e-9)
                          for lv in levels[-3:]) and a_hat <= levels[0]["max_ratio"] * 1.05:
            break
    return CalmnessEstimate(a_hat, diverging, witnesses, levels, excluded, fd.method(), seed)


# -- metric regularity -----------------------------------------------------------

def check_metric_regularity(sys: ConstraintSystem, alpha, r, r1=None, r2=None, samples=1000,
                            seed=0, mode="point") -> LabReport:
    """Sample ``(x, y)`` in the admissible region and test the regularity
    inequality with the declared ``alpha``.

    ``mode='point'``: ``d_{g^{-1}(y) cap C}(x) <= alpha |g(x) - y|`` for
    ``x in B_C(x0, r1)``, ``|g(x) - y| < r2 / alpha`` (``D`` is ignored,
    ``g(x0) = 0``).
    ``mode='set'``: ``d_{g^{-1}(D + y) cap C}(x) <= alpha d_{D cap B(g(x0), r1)}(g(x) - y)``;
    the plain ``d_D`` ratio is reported alongside, not asserted.
    """
    if r1 is None and r2 is None:
        r1 = r2 = r / 2.0
    if abs(r1 + r2 - r) > 1e-12 * max(1.0, r):
        raise ValueError("need r1 + r2 = r")
    rng = make_rng(seed)
    fd = FeasibleDistance(sys, seed)
    worst = 0.0
    worst_plain = 0.0
    worst_pair = None
    violations = tested = 0
    pts = _sample_C(sys, rng, samples, r1)
    g0 = sys.g(sys.x0)
    point_set = Ball.point(np.zeros(sys.q))
    if _is_point(sys.D) and not np.any(sys.D.center):
        point_set = sys.D  # keeps a declared closed form usable
    for x in pts:
        gx = sys.g(x)
        w = _unit_sphere(rng, 1, sys.q)[0]
        t = rng.random() * r2 / alpha
        if mode == "point":
            y = gx - t * w
            df, near = fd(x, y, D=point_set)
            rhs = np.linalg.norm(gx - y)
            plain = rhs
        else:
            y = rng.standard_normal(sys.q) * t
            trunc = truncated_distance(sys.D, gx - y, g0, r1)
            if not trunc < r2 / alpha:
                continue
            df, near = fd(x, y)
            rhs = trunc
            plain = sys.D.dist(gx - y)
        if near is None:
            continue
        tested += 1
        if rhs == 0.0:
            ratio = 0.0 if df <= 1e-12 else np.inf
        else:
            ratio = df / rhs
        plain_ratio = df / plain if plain > 0 else (0.0 if df <= 1e-12 else np.inf)
        worst_plain = max(worst_plain, plain_ratio)
        if ratio > worst:
            worst, worst_pair = ratio, {"x": x, "y": y}
        if df > alpha * rhs * (1 + 1e-9) + 1e-12:
            violations += 1
    return LabReport(
        "metric_regularity", violations == 0,
        {"alpha": alpha, "r": r, "r1": r1, "r2": r2, "mode": mode, "tested": tested,
         "violations": violations, "worst_ratio": worst, "worst_pair": worst_pair,
         "worst_plain_ratio": worst_plain if mode == "set" else None,
         "solver_failures": fd.failures},
        seed=seed, method=fd.method(None, point_set if mode == "point" else None))


# -- qualification -----------------------------------------------------------------

def _cone_constraints(K: cones.Cone, var):
    E, F = K.constraints()
    out = []
    if E.shape[0]:
        out.append(E @ var == 0)
    if F.shape[0]:
        out.append(F @ var <= 0)
    return out


def _min_scaled_preimage(J, KC, KD, W, a1, a2):
    """``min max(|h|/a1, |k|/a2)`` over ``J h - k = w``, ``h in KC``, ``k in KD``
    (``KD = None`` means ``k = 0``) for every row ``w`` of ``W``; minimum over
    convex piece pairs. Each piece pair is compiled once with ``w`` as a
    parameter."""
    import cvxpy as cp

    W = np.atleast_2d(W)
    best = np.full(len(W), np.inf)
    pieces_D = KD.pieces() if KD is not None else [None]
    for pc, pd in itertools.product(KC.pieces(), pieces_D):
        h = cp.Variable(J.shape[1])
        t = cp.Variable()
        w = cp.Parameter(J.shape[0])
        cons = _cone_constraints(pc, h) + [cp.norm(h, 2) <= a1 * t]
        if pd is None:
            cons.append(J @ h == w)
        else:
            k = cp.Variable(J.shape[0])
            cons += _cone_constraints(pd, k) + [cp.norm(k, 2) <= a2 * t, J @ h - k == w]
        prob = cp.Problem(cp.Minimize(t), cons)
        for i, wi in enumerate(W):
            w.value = wi
            _solve(prob)
            if prob.status in ("optimal", "optimal_inaccurate"):
                best[i] = min(best[i], float(prob.value))
    return best


def _directions(rng, q, count):
    if q == 2:
        ang = np.linspace(0, 2 * np.pi, count, endpoint=False)
        return np.column_stack([np.cos(ang), np.sin(ang)])
    eye = np.eye(q)
    return np.vstack([eye, -eye, _unit_sphere(rng, max(count - 2 * q, 0), q)])


def check_qualification(sys: ConstraintSystem, alpha=None, alpha1=None, alpha2=None,
                        r=None, variant="hcq", base_samples=5, directions=72, seed=0,
                        tol=1e-6) -> LabReport:
    """Test ``B(0,1) subset Dg(x) B_{K(C,x)}(0, a1) - B_{K(D,y)}(0, a2)``.

    ``variant``: ``hcq`` (no range cone, ``alpha``), ``hcq1`` (pairs
    ``(x, y)`` near ``(x0, g(x0))`` in ``C x D``) or ``hcq2`` (feasible ``x``
    only, ``y = g(x)``). Each direction ``w`` is covered when the optimal
    scaled norm is ``<= 1``.
    """
    rng = make_rng(seed)
    if variant == "hcq":
        if alpha is None:
            raise ValueError("hcq needs alpha")
        a1, a2 = alpha, None
    else:
        if alpha1 is None or alpha2 is None:
            raise ValueError(f"{variant} needs alpha1 and alpha2")
        a1, a2 = alpha1, alpha2
    r = 0.0 if r is None else r
    bases = [(sys.x0, sys.g(sys.x0))]
    if r > 0 and base_samples > 1:
        for x in _sample_C(sys, rng, 4 * base_samples, r):
            if len(bases) >= base_samples:
                break
            if variant == "hcq2":
                if sys.D.dist(sys.g(x)) <= FEAS_TOL:
                    bases.append((x, sys.g(x)))
            elif variant == "hcq1":
                y = sys.D.nearest(sys.g(sys.x0) + _in_ball(rng, 1, sys.q, r)[0])
                if np.linalg.norm(x - sys.x0) + np.linalg.norm(y - sys.g(sys.x0)) <= r:
                    bases.append((x, y))
            else:
                bases.append((x, sys.g(x)))
    W = _directions(rng, sys.q, directions)
    worst, worst_info, failed = 0.0, None, 0
    for x, y in bases:
        J = np.atleast_2d(sys.jac_g(x))
        KC = sys.C.contingent_cone(x) if not isinstance(sys.C, WholeSpace) else cones.Subspace.whole(sys.p)
        KD = None
        if variant != "hcq":
            KD = sys.D.contingent_cone(y) if not isinstance(sys.D, WholeSpace) else cones.Subspace.whole(sys.q)
        for w, val in zip(W, _min_scaled_preimage(J, KC, KD, W, a1, a2)):
            if val > worst:
                worst, worst_info = val, {"x": x, "y": y, "direction": w}
            if val > 1.0 + tol:
                failed += 1
    return LabReport(
        "qualification", failed == 0,
        {"variant": variant, "alpha": alpha, "alpha1": alpha1, "alpha2": alpha2, "r": r,
         "base_points": len(bases), "directions": int(len(W)), "violations": failed,
         "worst_scaled_norm": worst if np.isfinite(worst) else None,
         "worst_uncovered": not np.isfinite(worst), "worst": worst_info},
        seed=seed, method="conic-least-norm")


# -- multipliers -------------------------------------------------------------------

@dataclass
class MultiplierResult:
    y: Optional[np.ndarray]
    norm: float
    residual: float
    found: bool
    bound_calm: Optional[float]     # K_f a
    bound_set: Optional[float]      # K_f (1 + a (1 + K_g))
    bound_linear: Optional[float]   # K_f (1 + K_g a)
    within_bound: Optional[bool]
    method: str

    def record(self):
        return _floats(self.__dict__)


def _polar_param(K: cones.Cone, dim):
    """cvxpy expression for a generic element of the polar of each convex piece."""
    import cvxpy as cp

    out = []
    for piece in K.pieces():
        E, F = piece.constraints()
        terms = []
        if E.shape[0]:
            mu = cp.Variable(E.shape[0])
            terms.append(E.T @ mu)
        nu = None
        if F.shape[0]:
            nu = cp.Variable(F.shape[0], nonneg=True)
            terms.append(F.T @ nu)
        out.append(sum(terms) if terms else None)
    return out


def compute_multiplier(sys: ConstraintSystem, tol=MULTIPLIER_TOL) -> MultiplierResult:
    """Least-norm ``y`` with ``-grad f - Dg^T y in N_C(x0)`` (``y`` in the polar
    of ``K(D, g(x0))``); normal cones are polars of contingent cones."""
    sys.check_base_point()
    if sys.grad_f is None:
        raise ValueError("compute_multiplier needs grad_f")
    gf = np.asarray(sys.grad_f(sys.x0), float)
    J = np.atleast_2d(sys.jac_g(sys.x0))
    simple_C = isinstance(sys.C, WholeSpace)
    simple_D = isinstance(sys.D, WholeSpace) or _is_point(sys.D)
    if isinstance(sys.D, WholeSpace):
        y = np.zeros(sys.q)
        resid = float(sys.C.normal_distance(sys.x0, -gf)) if not simple_C else float(np.linalg.norm(gf))
        method = "trivial"
    elif simple_C and simple_D:
        y, *_ = np.linalg.lstsq(J.T, -gf, rcond=None)
        resid = float(np.linalg.norm(gf + J.T @ y))
        method = "least-squares"
    else:
        y, resid = _conic_multiplier(sys, gf, J, tol)
        method = "conic-two-stage"
    found = y is not None and resid <= tol
    norm = float(np.linalg.norm(y)) if y is not None else np.inf
    b_calm = b_set = b_lin = None
    if sys.K_f is not None and sys.a is not None:
        b_calm = sys.K_f * sys.a
        if sys.K_g is not None:
            b_set = sys.K_f * (1 + sys.a * (1 + sys.K_g))
            b_lin = sys.K_f * (1 + sys.K_g * sys.a)
    bound = b_calm if simple_D and simple_C else (b_set if b_set is not None else b_calm)
    within = None if bound is None or not found else bool(norm <= bound * (1 + 1e-6))
    return MultiplierResult(y if found else y, norm, resid, found, b_calm, b_set, b_lin, within, method)


def _conic_multiplier(sys, gf, J, tol):
    import cvxpy as cp

    y = cp.Variable(sys.q)
    cons = []
    nC = 0
    if not isinstance(sys.C, WholeSpace):
        KC = sys.C.contingent_cone(sys.x0)
        elems = _polar_param(KC, sys.p)
        n = cp.Variable(sys.p)
        for e in elems:
            cons.append(n == (e if e is not None else 0))
        nC = n
    if not _is_point(sys.D):
        KD = sys.D.contingent_cone(sys.g(sys.x0))
        for e in _polar_param(KD, sys.q):
            cons.append(y == (e if e is not None else 0))
    resid_expr = cp.norm(-gf - J.T @ y - nC, 2)
    p1 = cp.Problem(cp.Minimize(resid_expr), cons)
    _solve(p1)
    if y.value is None:
        return None, np.inf
    r1 = float(p1.value)
    p2 = cp.Problem(cp.Minimize(cp.norm(y, 2)), cons + [resid_expr <= r1 + tol / 2])
    _solve(p2)
    yv = np.asarray(y.value, float)
    # residual of the returned multiplier, measured exactly
    v = -gf - J.T @ yv
    resid = float(sys.C.normal_distance(sys.x0, v)) if not isinstance(sys.C, WholeSpace) else float(np.linalg.norm(v))
    return yv, resid


# -- calmness transfer ---------------------------------------------------------------

def _augmented_distance(sys, x, y, cache=None):
    """Sum-norm distance from ``(x, y)`` to ``{(x', g(x')) : x' in C, g(x') in D}``.

    ``cache`` (a dict) keeps the compiled conic problem between calls.
    """
    if sys.affine is not None and sys.C.convex and sys.D.convex and _cvx_ok(sys.C) and _cvx_ok(sys.D):
        import cvxpy as cp

        cache = {} if cache is None else cache
        if "prob" not in cache:
            G, c = sys.affine
            z = cp.Variable(sys.p)
            xp, yp = cp.Parameter(sys.p), cp.Parameter(sys.q)
            cache["prob"] = cp.Problem(cp.Minimize(cp.norm(xp - z, 2) + cp.norm(yp - G @ z - c, 2)),
                                       cvx_membership(sys.C, z) + cvx_membership(sys.D, G @ z + c))
            cache["params"] = (xp, yp)
        xp, yp = cache["params"]
        xp.value, yp.value = np.asarray(x, float), np.asarray(y, float)
        _solve(cache["prob"])
        return float(cache["prob"].value), "exact-convex"
    fd = FeasibleDistance(sys)
    best = np.inf
    for start in (x, np.linalg.lstsq(np.atleast_2d(sys.jac_g(x)), y - sys.g(x), rcond=None)[0] + x):
        _, near = fd(start)
        if near is not None:
            best = min(best, np.linalg.norm(x - near) + np.linalg.norm(y - sys.g(near)))
    return float(best), "upper-bound"


def check_calmness_transfer(sys: ConstraintSystem, a, K_g, samples=1000, radius=1.0,
                            seed=0) -> LabReport:
    """The augmented system ``g(x) - y = 0`` on ``C x D`` should be calm at
    ``(x0, g(x0))`` with constant ``1 + a (1 + K_g)`` in the sum norm."""
    sys.check_base_point()
    rng = make_rng(seed)
    const = 1.0 + a * (1.0 + K_g)
    g0 = sys.g(sys.x0)
    worst, violations, tested = 0.0, 0, 0
    method = None
    xs = _sample_C(sys, rng, samples, radius)
    cache = {}
    for x in xs:
        y = sys.D.nearest(g0 + _in_ball(rng, 1, sys.q, radius)[0])
        res = np.linalg.norm(sys.g(x) - y)
        if res == 0.0:
            continue
        dist, method = _augmented_distance(sys, x, y, cache)
        tested += 1
        ratio = dist / res
        worst = max(worst, ratio)
        if ratio > const * (1 + 1e-6):
            violations += 1
    return LabReport(
        "calmness_transfer", violations == 0,
        {"a": a, "K_g": K_g, "constant": const, "tested": tested, "violations": violations,
         "worst_ratio": worst},
        seed=seed, method=method)

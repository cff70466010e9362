"""Two classical finite-dimensional counterexamples.

``circles``: a unit half circle tangent to a half circle of radius 2 and a
line through the origin. The feasible set is the single tangency point, and
the calmness ratio blows up like ``4 / rho`` along the small circle.

``brokate``: truncations of a diagonal operator with geometrically decaying
entries, for which the multiplier norms grow without bound.
"""
from __future__ import annotations

import numpy as np

from .lab import ConstraintSystem, compute_multiplier
from .sets import Arc, Ball, Line, Union, WholeSpace


def circles_sets():
    """``C`` = right half of the unit circle centred at ``(0, -1)``;
    ``D`` = the line ``y = x`` together with the right half of the circle of
    radius 2 centred at ``(0, -2)``."""
    C = Arc.half_circle([0.0, -1.0], 1.0)
    D = Union([Line([0.0, 0.0], [1.0, 1.0]), Arc.half_circle([0.0, -2.0], 2.0)])
    return C, D


def circles_system(alpha1=2.0, alpha2=2.0, r=0.5) -> ConstraintSystem:
    C, D = circles_sets()
    return ConstraintSystem.identity_map(C, D, np.zeros(2), alpha1=alpha1, alpha2=alpha2, r=r,
                                         name="circles")


def circles_point(rho: float) -> np.ndarray:
    """Point of ``C`` at distance ``rho`` from the origin."""
    return np.array([rho * np.sqrt(1.0 - rho**2 / 4.0), -rho**2 / 2.0])


def circles_ratio(rho: float) -> dict:
    """Feasible-set distance over ``d_D`` at the point of ``C`` at distance ``rho``."""
    C, D = circles_sets()
    z = circles_point(rho)
    d_feas = float(np.linalg.norm(z))  # the feasible set is {0}
    d_D, nearest = D.distance(z)
    closed_form = 2.0 - np.sqrt(4.0 - rho**2)
    return {"rho": rho, "point": z.tolist(), "d_feasible": d_feas, "d_D": d_D,
            "d_D_closed_form": float(closed_form), "ratio": d_feas / d_D,
            "ratio_times_rho": d_feas / d_D * rho}


def brokate_system(n: int) -> ConstraintSystem:
    """``min x*.x`` subject to ``A x = 0`` with ``A = diag(2^{1-i})`` and
    ``x*_i = 1/i`` (``i = 1..n``)."""
    i = np.arange(1, n + 1, dtype=float)
    A = np.diag(2.0 ** (1 - i))
    xstar = 1.0 / i
    sigma_min = float(2.0 ** (1 - n))
    return ConstraintSystem.linear(
        A, None, WholeSpace(n), Ball.point(np.zeros(n)), np.zeros(n),
        f=lambda x: float(xstar @ x), grad_f=lambda x: xstar,
        K_f=float(np.linalg.norm(xstar)), a=1.0 / sigma_min, alpha=1.0 / sigma_min, r=1.0,
        name=f"brokate_{n}",
    )


def brokate_multiplier_closed_form(n: int) -> np.ndarray:
    i = np.arange(1, n + 1, dtype=float)
    return -(2.0 ** (i - 1)) / i


def brokate_multipliers(ns) -> list[dict]:
    out = []
    for n in ns:
        res = compute_multiplier(brokate_system(n))
        out.append({"n": int(n), "norm": res.norm, "residual": res.residual, "found": res.found,
                    "y": res.y.tolist(), "bound": res.bound_calm, "within_bound": res.within_bound})
    return out

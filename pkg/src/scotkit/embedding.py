"""The tree dynamics as a finite-dimensional constraint map.

States of all stages are flattened node by node and scaled by
``sqrt(prob)``, so the Euclidean norm of a flat vector is the product
``L2(P)`` norm ``sqrt(sum_k E|x_k|^2)``. With the control ``u`` frozen the map
``x -> g(x, u)`` has the explicit inverse ``y -> x_y`` (the rollout with
shifted residuals), which makes the feasible-set distance exact.
"""
from __future__ import annotations

import numpy as np

from .control import (ControlProblem, _step_comps, control_values, linearize_g, residual_g,
                      right_inverse_constants, rollout)
from .regularity.lab import ConstraintSystem
from .regularity.sets import Ball, WholeSpace
from .stage import fills_stage
from .tree import ScenarioTree, lift


def regularity_alpha(N: int, d: int, c1: float) -> float:
    """``(N+1) cbar^((N+1)/2)``: summing the per-stage right-inverse bound
    over the ``N+1`` stages bounds the inverse in the product norm."""
    cbar, _ = right_inverse_constants(N, d, c1)
    return float((N + 1) * cbar ** ((N + 1) / 2))


class DynamicsMap:
    def __init__(self, p: ControlProblem, tree: ScenarioTree, u):
        bad = [k for k in range(1, p.N + 1) if not fills_stage(tree, k)]
        if bad:
            raise ValueError(
                f"stage spaces do not fill stages {bad}: the flat embedding needs every "
                "stage-k process to lie in X_k (e.g. Rademacher noise with d = 1)"
            )
        self.p, self.tree = p, tree
        self.U = control_values(p, u, tree)
        self.sizes = [tree.n_nodes[k] * p.n for k in range(p.N + 1)]
        self.splits = np.cumsum(self.sizes)[:-1]
        self.scale = np.concatenate([np.repeat(np.sqrt(tree.prob[k]), p.n) for k in range(p.N + 1)])
        self.dim = int(sum(self.sizes))

    def flatten(self, xs) -> np.ndarray:
        vals = [x.values if hasattr(x, "values") else np.asarray(x, float) for x in xs]
        return np.concatenate([v.ravel() for v in vals]) * self.scale

    def unflatten(self, vec) -> list:
        raw = np.asarray(vec, float) / self.scale
        return [part.reshape(-1, self.p.n) for part in np.split(raw, self.splits)]

    def g(self, vec) -> np.ndarray:
        res = residual_g(self.p, self.unflatten(vec), self.U, self.tree)
        return self.flatten([r.values for r in res])

    def preimage(self, y) -> np.ndarray:
        """The unique ``x`` with ``g(x, u) = y``."""
        Y = self.unflatten(y)
        X = [self.p.x0[None] - Y[0]]
        for k in range(self.p.N):
            comps = _step_comps(np.asarray(self.p.b(k, X[k], self.U[k]), float),
                                np.asarray(self.p.sigma(k, X[k], self.U[k]), float))
            X.append(lift(comps, self.tree, k + 1) - Y[k + 1])
        return self.flatten(X)

    def jacobian(self, vec) -> np.ndarray:
        """Dense ``D_x g`` in flat coordinates (small trees only)."""
        X = self.unflatten(vec)
        cols = []
        zero_v = [np.zeros_like(Uk) for Uk in self.U]
        for j in range(self.dim):
            e = np.zeros(self.dim)
            e[j] = 1.0
            dz = linearize_g(self.p, X, self.U, self.tree, self.unflatten(e), zero_v)
            cols.append(self.flatten([d.values for d in dz]))
        return np.column_stack(cols)

    def base_point(self) -> np.ndarray:
        return self.flatten(rollout(self.p, self.U, self.tree))

    def system(self, alpha=None) -> ConstraintSystem:
        if alpha is None and self.p.c1 is not None:
            alpha = regularity_alpha(self.p.N, self.p.d, self.p.c1)

        def exact(x, y):
            z = self.preimage(y)
            return float(np.linalg.norm(x - z)), z

        return ConstraintSystem(
            self.dim, self.dim, self.g, self.jacobian, WholeSpace(self.dim),
            Ball.point(np.zeros(self.dim)), self.base_point(), alpha=alpha,
            feasible_distance=exact, name=f"dynamics_{self.p.name}",
        )

"""Stage spaces ``X_k = {y^0 + sum_i y^i w_k^i}`` with ``F_{k-1}``-measurable
coefficients, their isometric norm and the orthogonal projection onto them."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tree import AdaptedProcess, ScenarioTree, lift, project_coefficients

MEMBERSHIP_RTOL = 1e-10


class NotInStageSpace(ValueError):
    def __init__(self, stage, residual, scale):
        super().__init__(
            f"stage {stage}: element is not in X_{stage} "
            f"(residual {residual:.3e} > {MEMBERSHIP_RTOL:g}*(1+{scale:.3e}))"
        )
        self.stage = stage
        self.residual = residual


@dataclass(frozen=True, eq=False)
class StageDecomposition:
    """Coefficients ``(y^0, ..., y^d)`` stacked as ``comps[i]`` with shape
    ``(M_{k-1}, *shape)``. Stage 0 (``X_0 = R^n``) uses ``comps`` of shape
    ``(1, 1, *shape)``."""

    tree: ScenarioTree
    stage: int
    comps: np.ndarray

    def __post_init__(self):
        comps = np.asarray(self.comps, dtype=float)
        k = self.stage
        want = (1, 1) if k == 0 else (self.tree.d + 1, self.tree.n_nodes[k - 1])
        if comps.shape[:2] != want:
            raise ValueError(f"stage {k} decomposition needs leading shape {want}, got {comps.shape}")
        object.__setattr__(self, "comps", comps)

    @classmethod
    def from_processes(cls, components: list[AdaptedProcess]) -> "StageDecomposition":
        tree = components[0].tree
        prev = components[0].stage
        if len(components) != tree.d + 1 or any(c.stage != prev for c in components):
            raise ValueError("need d+1 components on one common stage")
        return cls(tree, prev + 1, np.stack([c.values for c in components]))

    def component(self, i: int) -> AdaptedProcess:
        return AdaptedProcess(self.tree, max(self.stage - 1, 0), self.comps[i])

    @property
    def shape(self):
        return self.comps.shape[2:]


def assemble(dec: StageDecomposition) -> AdaptedProcess:
    """Node values of ``y^0 + sum_i y^i w_k^i`` at stage ``k``."""
    if dec.stage == 0:
        return AdaptedProcess(dec.tree, 0, dec.comps[0])
    return AdaptedProcess(dec.tree, dec.stage, lift(dec.comps, dec.tree, dec.stage))


def project(x: AdaptedProcess) -> tuple[StageDecomposition, float]:
    """Orthogonal projection of a stage-k process onto ``X_k``.

    Returns the decomposition and the L2 norm of the part of ``x`` outside
    ``X_k``. Stage 0 is all of ``R^n`` so its residual is zero.
    """
    if x.stage == 0:
        return StageDecomposition(x.tree, 0, x.values[None]), 0.0
    dec = StageDecomposition(x.tree, x.stage, project_coefficients(x))
    resid = (x - assemble(dec)).norm()
    return dec, resid


def norm_Xk(dec: StageDecomposition) -> float:
    """``sqrt(sum_i E|y^i|^2)``; equals the L2 norm of ``assemble(dec)``."""
    k = dec.stage
    if k == 0:
        return float(np.sqrt(np.sum(dec.comps**2)))
    prob = dec.tree.prob[k - 1]
    flat = dec.comps.reshape(dec.comps.shape[0], dec.comps.shape[1], -1)
    return float(np.sqrt(np.einsum("m,imf,imf->", prob, flat, flat)))


@dataclass(frozen=True)
class MembershipRecord:
    stage: int
    residual: float
    scale: float
    exact: bool  # residual == 0 up to rounding noise of the projection


def decompose(x: AdaptedProcess, rtol: float = MEMBERSHIP_RTOL):
    """Project onto ``X_k`` and enforce membership.

    Near-members (``residual <= rtol*(1+||x||)``) are accepted and the returned
    record keeps the residual; anything further away raises
    :class:`NotInStageSpace`.
    """
    dec, resid = project(x)
    scale = x.norm()
    if resid > rtol * (1.0 + scale):
        raise NotInStageSpace(x.stage, resid, scale)
    return dec, MembershipRecord(x.stage, resid, scale, resid <= 1e-14 * (1.0 + scale))


def atom_dimensions(tree: ScenarioTree, k: int) -> tuple[int, int]:
    """``(dim L^2 per parent atom, dim X_k per parent atom) = (B_k, d+1)``.

    ``X_k`` is all of ``L^2_{F_k}`` exactly when the two agree, e.g. a single
    Rademacher coordinate; two binary coordinates give ``4 > 3``.
    """
    return tree.branching(k), tree.d + 1


def fills_stage(tree: ScenarioTree, k: int) -> bool:
    b, dim = atom_dimensions(tree, k)
    return b == dim

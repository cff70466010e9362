"""Pointwise control constraint sets, applied independently at every node.

Each set works on arrays of shape ``(M, m)`` (one row per node). Cones are the
contingent cones of the pointwise set, which for the convex variants coincide
with the Clarke tangent cone.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ACTIVE_TOL = 1e-9


class ControlSet:
    kind = "abstract"

    def project(self, U):
        raise NotImplementedError

    def violation(self, U):
        """Distance of every row to the set."""
        return np.linalg.norm(U - self.project(U), axis=1)

    def tangent_project(self, U, V):
        """Row-wise projection of ``V`` onto the tangent cone at ``U``."""
        raise NotImplementedError

    def to_catalog(self):
        raise NotImplementedError

    def describe(self) -> dict:
        return {"kind": self.kind}


@dataclass(frozen=True)
class WholeSpace(ControlSet):
    kind = "whole"

    def project(self, U):
        return np.array(U, dtype=float)

    def tangent_project(self, U, V):
        return np.array(V, dtype=float)

    def to_catalog(self):
        from .regularity.sets import WholeSpace as W

        return W(None)


@dataclass(frozen=True, eq=False)
class Box(ControlSet):
    lower: np.ndarray
    upper: np.ndarray
    kind = "box"

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, float))
        hi = np.atleast_1d(np.asarray(self.upper, float))
        if np.any(lo > hi):
            raise ValueError("box lower bound exceeds upper bound")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    def project(self, U):
        return np.clip(U, self.lower, self.upper)

    def tangent_project(self, U, V):
        at_lo = U <= self.lower + ACTIVE_TOL
        at_hi = U >= self.upper - ACTIVE_TOL
        out = np.array(V, dtype=float)
        out = np.where(at_lo, np.maximum(out, 0.0), out)
        out = np.where(at_hi, np.minimum(out, 0.0), out)
        return out

    def to_catalog(self):
        from .regularity.sets import Box as B

        return B(self.lower, self.upper)

    def describe(self):
        return {"kind": "box", "lower": self.lower.tolist(), "upper": self.upper.tolist()}


@dataclass(frozen=True, eq=False)
class Ball(ControlSet):
    center: np.ndarray
    radius: float
    kind = "ball"

    def __post_init__(self):
        object.__setattr__(self, "center", np.atleast_1d(np.asarray(self.center, float)))

    def project(self, U):
        diff = U - self.center
        nrm = np.linalg.norm(diff, axis=1, keepdims=True)
        scale = np.minimum(1.0, self.radius / np.maximum(nrm, 1e-300))
        return self.center + diff * scale

    def tangent_project(self, U, V):
        diff = U - self.center
        nrm = np.linalg.norm(diff, axis=1, keepdims=True)
        on_boundary = nrm >= self.radius - ACTIVE_TOL
        normal = diff / np.maximum(nrm, 1e-300)
        outward = np.maximum(np.sum(V * normal, axis=1, keepdims=True), 0.0)
        return np.where(on_boundary, V - outward * normal, V)

    def to_catalog(self):
        from .regularity.sets import Ball as B

        return B(self.center, self.radius)

    def describe(self):
        return {"kind": "ball", "center": self.center.tolist(), "radius": self.radius}


@dataclass(frozen=True, eq=False)
class BoxUnion(ControlSet):
    """Finite union of boxes. Projection goes to the nearest box (lowest index
    on ties); the cone at ``u`` is the union of the cones of every box that
    contains ``u``."""

    boxes: tuple
    kind = "box_union"

    def __post_init__(self):
        object.__setattr__(self, "boxes", tuple(self.boxes))
        if not self.boxes:
            raise ValueError("box union needs at least one box")

    def project(self, U):
        cands = np.stack([b.project(U) for b in self.boxes])  # (nb, M, m)
        dist = np.sum((cands - U[None]) ** 2, axis=2)
        pick = np.argmin(dist, axis=0)  # first minimum wins
        return cands[pick, np.arange(U.shape[0])]

    def tangent_project(self, U, V):
        best = None
        best_gap = None
        for b in self.boxes:
            member = b.violation(U) <= ACTIVE_TOL
            proj = b.tangent_project(U, V)
            gap = np.where(member, np.linalg.norm(V - proj, axis=1), np.inf)
            if best is None:
                best, best_gap = proj, gap
            else:
                better = gap < best_gap
                best = np.where(better[:, None], proj, best)
                best_gap = np.where(better, gap, best_gap)
        return best

    def to_catalog(self):
        from .regularity.sets import Union

        return Union([b.to_catalog() for b in self.boxes])

    def describe(self):
        return {"kind": "box_union", "boxes": [b.describe() for b in self.boxes]}


def from_descriptor(desc: dict | None, m: int) -> ControlSet:
    if desc is None or desc.get("kind", "whole") == "whole":
        return WholeSpace()
    kind = desc["kind"]
    if kind == "box":
        return Box(np.broadcast_to(desc["lower"], (m,)), np.broadcast_to(desc["upper"], (m,)))
    if kind == "ball":
        return Ball(np.broadcast_to(desc.get("center", 0.0), (m,)), float(desc["radius"]))
    if kind == "box_union":
        return BoxUnion([from_descriptor(b, m) for b in desc["boxes"]])
    raise ValueError(f"unknown control set kind {kind!r}")

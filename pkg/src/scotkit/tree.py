"""Finite scenario trees driven by stagewise independent noise.

Nodes are stored stage by stage. Within a stage the children of a parent form a
contiguous block of ``B_k`` rows, so every stage-wise operation is a reshape plus
a weighted reduction (see :mod:`scotkit.kernels`).
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from . import kernels

logger = logging.getLogger(__name__)

MOMENT_TOL = 1e-12
DEFAULT_MAX_NODES = 2_000_000


class NoiseSpecError(ValueError):
    """Noise law violating the mean-0 / variance-1 / probability requirements."""


class TreeTooLargeError(ValueError):
    pass


Support = Sequence[tuple[float, float]]


@dataclass(frozen=True)
class NoiseSpec:
    """Per-coordinate finite supports ``[(value, prob), ...]``.

    ``support[i]`` is the law of coordinate ``i`` at every stage unless
    ``stage_overrides[k]`` replaces the full list for stage ``k``.
    """

    d: int
    N: int
    support: tuple
    stage_overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "support", _freeze(self.support))
        object.__setattr__(
            self,
            "stage_overrides",
            {int(k): _freeze(v) for k, v in dict(self.stage_overrides).items()},
        )

    @classmethod
    def rademacher(cls, d: int, N: int) -> "NoiseSpec":
        return cls(d=d, N=N, support=[[(1.0, 0.5), (-1.0, 0.5)]] * d)

    def stage_support(self, k: int):
        return self.stage_overrides.get(k, self.support)

    def validate(self) -> None:
        if self.d < 1:
            raise NoiseSpecError("noise dimension d must be >= 1")
        if self.N < 1:
            raise NoiseSpecError("number of stages N must be >= 1")
        for k in sorted(self.stage_overrides):
            if not 1 <= k <= self.N:
                raise NoiseSpecError(f"stage override for k={k} outside [1:{self.N}]")
        for k in range(1, self.N + 1):
            sup = self.stage_support(k)
            if len(sup) != self.d:
                raise NoiseSpecError(
                    f"stage {k}: expected {self.d} coordinate supports, got {len(sup)}"
                )
            for i, coord in enumerate(sup):
                _check_coordinate(coord, i + 1, k)


def _freeze(support):
    return tuple(tuple((float(v), float(p)) for v, p in coord) for coord in support)


def _check_coordinate(coord, i, k):
    where = f"coordinate {i} (stage {k})"
    if len(coord) < 2:
        raise NoiseSpecError(f"{where}: support size must be >= 2")
    vals = np.array([v for v, _ in coord])
    probs = np.array([p for _, p in coord])
    if np.any(probs <= 0):
        raise NoiseSpecError(f"{where}: probabilities must be > 0")
    total = probs.sum()
    if abs(total - 1.0) > MOMENT_TOL:
        raise NoiseSpecError(f"{where}: probabilities sum to {total!r}, not 1")
    mean = float(probs @ vals)
    if abs(mean) > MOMENT_TOL:
        raise NoiseSpecError(f"{where}: mean = {mean!r}, expected 0")
    second = float(probs @ vals**2)
    if abs(second - 1.0) > MOMENT_TOL:
        raise NoiseSpecError(f"{where}: second moment E(w^2) = {second!r}, expected 1")


def renormalize(spec: NoiseSpec) -> NoiseSpec:
    """Shift and scale every support so mean is 0 and variance 1.

    Probabilities are renormalised to sum to one first. Every change is logged.
    """

    def fix(coord, label):
        probs = np.array([p for _, p in coord], dtype=float)
        probs = probs / probs.sum()
        vals = np.array([v for v, _ in coord], dtype=float)
        mean = probs @ vals
        std = np.sqrt(probs @ (vals - mean) ** 2)
        if std == 0:
            raise NoiseSpecError(f"{label}: degenerate support cannot be renormalised")
        new = (vals - mean) / std
        if not np.allclose(new, vals, rtol=0, atol=0):
            logger.info("renormalised %s: mean %.3g, std %.3g", label, mean, std)
        return [(float(v), float(p)) for v, p in zip(new, probs)]

    support = [fix(c, f"coordinate {i + 1}") for i, c in enumerate(spec.support)]
    overrides = {
        k: [fix(c, f"coordinate {i + 1} (stage {k})") for i, c in enumerate(sup)]
        for k, sup in spec.stage_overrides.items()
    }
    return NoiseSpec(d=spec.d, N=spec.N, support=support, stage_overrides=overrides)


class Node(NamedTuple):
    id: int
    stage: int
    parent: int  # -1 for the root
    w: np.ndarray
    prob: float


class ScenarioTree:
    """Filtered finite probability space built by :func:`build_tree`.

    Per stage ``k`` the tree keeps
      * ``branch_noise[k]``: ``(B_k, d)`` joint outcomes of ``w_k``,
      * ``branch_prob[k]``: ``(B_k,)`` conditional probabilities,
      * ``prob[k]``: ``(M_k,)`` unconditional node probabilities,
      * ``noise[k]``: ``(M_k, d)`` realised ``w_k`` at every node.
    Stage 0 is the root with ``w_0 = 0``.
    """

    def __init__(self, d: int, branch_noise: list, branch_prob: list):
        self.d = d
        self.N = len(branch_noise)
        self.branch_noise = [np.zeros((1, d))] + [np.asarray(b, float) for b in branch_noise]
        self.branch_prob = [np.ones(1)] + [np.asarray(p, float) for p in branch_prob]
        self.prob = [np.ones(1)]
        self.noise = [np.zeros((1, d))]
        for k in range(1, self.N + 1):
            self.prob.append(np.outer(self.prob[-1], self.branch_prob[k]).ravel())
            M_prev = self.prob[k - 1].shape[0]
            self.noise.append(np.tile(self.branch_noise[k], (M_prev, 1)))
        self.n_nodes = [p.shape[0] for p in self.prob]
        self.offsets = np.concatenate([[0], np.cumsum(self.n_nodes)]).astype(int)
        # per-branch basis [1, w^1, ..., w^d]
        self.basis = [None] + [
            np.hstack([np.ones((b.shape[0], 1)), b]) for b in self.branch_noise[1:]
        ]
        for arr in self.prob + self.noise + self.branch_noise + self.branch_prob:
            arr.setflags(write=False)

    # -- structure -------------------------------------------------------
    @property
    def total_nodes(self) -> int:
        return int(self.offsets[-1])

    def branching(self, k: int) -> int:
        """Number of children of each stage-(k-1) node."""
        return self.branch_noise[k].shape[0]

    def parent_index(self, k: int) -> np.ndarray:
        """Stage-(k-1) parent of every stage-k node (local indices)."""
        return np.arange(self.n_nodes[k]) // self.branching(k)

    def node(self, gid: int) -> Node:
        k = int(np.searchsorted(self.offsets, gid, side="right") - 1)
        j = gid - self.offsets[k]
        parent = -1 if k == 0 else int(self.offsets[k - 1] + j // self.branching(k))
        return Node(gid, k, parent, self.noise[k][j].copy(), float(self.prob[k][j]))

    @property
    def nodes(self) -> list[Node]:
        return [self.node(i) for i in range(self.total_nodes)]

    def children(self, gid: int) -> list[int]:
        k = self.node(gid).stage
        if k == self.N:
            return []
        B = self.branching(k + 1)
        j = gid - self.offsets[k]
        start = self.offsets[k + 1] + j * B
        return list(range(start, start + B))

    def __repr__(self):
        return f"ScenarioTree(N={self.N}, d={self.d}, nodes={self.total_nodes})"

    # -- processes -------------------------------------------------------
    def constant(self, k: int, value) -> "AdaptedProcess":
        value = np.asarray(value, dtype=float)
        vals = np.broadcast_to(value, (self.n_nodes[k],) + value.shape).copy()
        return AdaptedProcess(self, k, vals)

    def noise_process(self, k: int, i: int | None = None) -> "AdaptedProcess":
        """``w_k`` as a stage-k process; coordinate ``i`` is 1-based."""
        vals = self.noise[k] if i is None else self.noise[k][:, i - 1]
        return AdaptedProcess(self, k, np.array(vals))

    def zeros(self, k: int, shape=()) -> "AdaptedProcess":
        return AdaptedProcess(self, k, np.zeros((self.n_nodes[k],) + tuple(shape)))


def build_tree(spec: NoiseSpec, max_nodes: int = DEFAULT_MAX_NODES) -> ScenarioTree:
    """Product-branching tree; children ordered lexicographically in the
    coordinate outcome indices (first coordinate varies slowest)."""
    spec.validate()
    total, M = 1, 1
    branch_noise, branch_prob = [], []
    for k in range(1, spec.N + 1):
        sup = spec.stage_support(k)
        combos = list(itertools.product(*[range(len(c)) for c in sup]))
        noise = np.array([[sup[i][c[i]][0] for i in range(spec.d)] for c in combos])
        prob = np.array([np.prod([sup[i][c[i]][1] for i in range(spec.d)]) for c in combos])
        M *= len(combos)
        total += M
        if total > max_nodes:
            raise TreeTooLargeError(
                f"tree would exceed the node budget ({max_nodes}) at stage {k}"
            )
        branch_noise.append(noise)
        branch_prob.append(prob)
    return ScenarioTree(spec.d, branch_noise, branch_prob)


@dataclass(frozen=True, eq=False)
class AdaptedProcess:
    """One value per stage-``k`` node; ``values`` has shape ``(M_k, *shape)``."""

    tree: ScenarioTree
    stage: int
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim == 0 or vals.shape[0] != self.tree.n_nodes[self.stage]:
            raise ValueError(
                f"stage {self.stage} needs {self.tree.n_nodes[self.stage]} node values, "
                f"got array of shape {vals.shape}"
            )
        object.__setattr__(self, "values", vals)

    @property
    def shape(self):
        return self.values.shape[1:]

    def _like(self, values):
        return AdaptedProcess(self.tree, self.stage, values)

    def _other(self, other):
        if isinstance(other, AdaptedProcess):
            if other.stage != self.stage or other.tree is not self.tree:
                raise ValueError("processes live on different stages or trees")
            return other.values
        return other

    def __add__(self, other):
        return self._like(self.values + self._other(other))

    __radd__ = __add__

    def __sub__(self, other):
        return self._like(self.values - self._other(other))

    def __rsub__(self, other):
        return self._like(self._other(other) - self.values)

    def __mul__(self, other):
        o = self._other(other)
        if isinstance(other, AdaptedProcess) and o.ndim < self.values.ndim:
            o = o.reshape(o.shape + (1,) * (self.values.ndim - o.ndim))
        return self._like(self.values * o)

    __rmul__ = __mul__

    def __neg__(self):
        return self._like(-self.values)

    def sq_norm(self) -> float:
        """``E|x|^2`` (Frobenius over the value shape)."""
        flat = self.values.reshape(self.values.shape[0], -1)
        return float(self.tree.prob[self.stage] @ np.einsum("mf,mf->m", flat, flat))

    def norm(self) -> float:
        return float(np.sqrt(self.sq_norm()))


def expectation(x: AdaptedProcess) -> np.ndarray:
    """``E(x) = sum_nodes prob * value``."""
    return np.tensordot(x.tree.prob[x.stage], x.values, axes=(0, 0))


def _flat(x: AdaptedProcess):
    return x.values.reshape(x.values.shape[0], -1)


def cond_expectation(x: AdaptedProcess, weight: int | None = None) -> AdaptedProcess:
    """``E(x | F_{k-1})`` or, with ``weight=i``, ``E(x w_k^i | F_{k-1})``."""
    tree, k = x.tree, x.stage
    if k < 1:
        raise ValueError("conditional expectation needs a stage >= 1 process")
    if weight is not None and not 1 <= weight <= tree.d:
        raise ValueError(f"weight index {weight} outside [1:{tree.d}]")
    col = 0 if weight is None else weight
    coef = (tree.branch_prob[k] * tree.basis[k][:, col])[:, None]
    out = kernels.project_children(_flat(x), coef)[0]
    return AdaptedProcess(tree, k - 1, out.reshape((-1,) + x.shape))


def project_coefficients(x: AdaptedProcess) -> np.ndarray:
    """All ``d+1`` conditional coefficients at once: ``(d+1, M_{k-1}, *shape)``."""
    tree, k = x.tree, x.stage
    if k < 1:
        raise ValueError("projection coefficients need a stage >= 1 process")
    coef = tree.branch_prob[k][:, None] * tree.basis[k]
    out = kernels.project_children(_flat(x), coef)
    return out.reshape((tree.d + 1, tree.n_nodes[k - 1]) + x.shape)


def lift(comps: np.ndarray, tree: ScenarioTree, k: int) -> np.ndarray:
    """Node values at stage ``k`` of ``y^0 + sum_i y^i w_k^i`` from stage-(k-1)
    coefficients ``comps`` of shape ``(d+1, M_{k-1}, *shape)``."""
    comps = np.asarray(comps, dtype=float)
    shape = comps.shape[2:]
    flat = comps.reshape(comps.shape[0], comps.shape[1], -1)
    out = kernels.lift_children(flat, tree.basis[k])
    return out.reshape((tree.n_nodes[k],) + shape)


def to_children(x: AdaptedProcess) -> AdaptedProcess:
    """Copy a stage-k process to every child at stage k+1 (the inclusion
    ``L^2_{F_k} -> L^2_{F_{k+1}}``)."""
    tree, k = x.tree, x.stage
    return AdaptedProcess(tree, k + 1, np.repeat(x.values, tree.branching(k + 1), axis=0))

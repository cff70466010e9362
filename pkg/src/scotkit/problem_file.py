"""JSON problem files (version tag ``scotkit/1``).

A file names a ``kind`` (``discrete``, ``sde`` or ``regularity``), a
``family`` and its ``params``; matrices are row-major nested arrays. Loading
validates the schema, then dimensions, then builds the problem object.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Any

import jsonschema
import numpy as np

from . import bridge, controlsets, families
from .regularity import examples as reg_examples
from .regularity.lab import ConstraintSystem
from .regularity.sets import from_descriptor as set_from_descriptor
from .tree import NoiseSpec, NoiseSpecError, build_tree

VERSION = "scotkit/1"

FAMILIES = {
    "discrete": ("linear_quadratic", "catalog_nonlinear"),
    "sde": ("lq_sde", "catalog_nonlinear_sde"),
    "regularity": ("catalog_system", "circles", "brokate"),
}

_num = {"type": "number"}
_arr = {"type": "array"}
_int1 = {"type": "integer", "minimum": 1}
_set = {"type": "object", "required": ["kind"], "properties": {"kind": {"type": "string"}}}

TOP_SCHEMA = {
    "type": "object",
    "required": ["version", "kind", "family", "params"],
    "additionalProperties": False,
    "properties": {
        "version": {"const": VERSION},
        "kind": {"enum": list(FAMILIES)},
        "family": {"type": "string"},
        "name": {"type": "string"},
        "seed": {"type": "integer", "minimum": 0},
        "tolerances": {"type": "object", "additionalProperties": _num},
        "params": {"type": "object"},
    },
}

_lq_common = {
    "x0": _arr, "A": _arr, "B": _arr, "Q": _arr, "R": _arr, "C": _arr, "D": _arr,
    "beta": _num, "gamma": _num, "eta": _num, "c1": _num, "c2": _num,
    "controls": _set, "initial_set": _set, "u": _arr,
}

PARAM_SCHEMAS = {
    "discrete": {
        "type": "object",
        "required": ["N", "n", "m", "d", "x0", "A", "B", "Q", "R", "QN"],
        "additionalProperties": False,
        "properties": {**_lq_common, "N": _int1, "n": _int1, "m": _int1, "d": _int1, "QN": _arr,
                       "noise": {"type": "object", "properties": {
                           "kind": {"enum": ["rademacher", "custom"]},
                           "support": _arr, "stage_overrides": {"type": "object"}}}},
    },
    "sde": {
        "type": "object",
        "required": ["T", "N", "x0", "A", "B", "Q", "R", "QT"],
        "additionalProperties": False,
        "properties": {**_lq_common, "T": {"type": "number", "exclusiveMinimum": 0},
                       "N": {"oneOf": [_int1, {"type": "array", "items": _int1, "minItems": 1}]},
                       "QT": _arr, "s": _arr},
    },
    "catalog_system": {
        "type": "object",
        "required": ["map", "C", "D", "x0"],
        "additionalProperties": False,
        "properties": {
            "map": {"type": "object", "required": ["kind"], "properties": {
                "kind": {"enum": ["identity", "linear"]}, "G": _arr, "c": _arr}},
            "C": _set, "D": _set, "x0": _arr, "grad_f": _arr,
            "K_f": _num, "K_g": _num, "a": _num, "alpha": _num, "alpha1": _num, "alpha2": _num,
            "r": _num, "variant": {"enum": ["hcq", "hcq1", "hcq2"]}, "mode": {"enum": ["point", "set"]},
        },
    },
    "circles": {"type": "object", "additionalProperties": False,
                "properties": {"alpha1": _num, "alpha2": _num, "r": _num,
                               "rho": {"type": "array", "items": _num}}},
    "brokate": {"type": "object", "additionalProperties": False,
                "properties": {"n": _int1, "n_max": _int1}},
}


class ProblemFileError(ValueError):
    """Invalid problem file; ``errors`` lists one message per problem."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


@dataclass
class ProblemFile:
    raw: dict
    kind: str
    family: str
    seed: int
    tolerances: dict
    digest: str
    problem: Any = None
    noise: Any = None
    extras: dict = field(default_factory=dict)

    def tree(self):
        if self.kind != "discrete":
            raise ValueError("only discrete problems carry a scenario tree")
        return build_tree(self.noise)

    def tol(self, name, default):
        return float(self.tolerances.get(name, default))


def digest(raw: dict) -> str:
    text = json.dumps(raw, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


def _path(err) -> str:
    parts = [str(p) for p in err.absolute_path]
    return ".".join(parts) if parts else "<root>"


def _schema_errors(instance, schema, prefix=""):
    v = jsonschema.Draft202012Validator(schema)
    out = []
    for err in sorted(v.iter_errors(instance), key=lambda e: list(map(str, e.absolute_path))):
        where = _path(err)
        where = f"{prefix}.{where}" if prefix and where != "<root>" else (prefix or where)
        out.append(f"{where}: {err.message}")
    return out


def _shape(params, key, shapes, errors):
    """Convert ``params[key]`` to an array whose shape is one of ``shapes``."""
    if key not in params:
        return None
    try:
        arr = np.asarray(params[key], dtype=float)
    except (TypeError, ValueError):
        errors.append(f"params.{key}: not a rectangular numeric array")
        return None
    if arr.shape not in shapes:
        want = " or ".join(str(s) for s in shapes)
        errors.append(f"params.{key}: expected shape {want}, got {arr.shape}")
        return None
    if not np.all(np.isfinite(arr)):
        errors.append(f"params.{key}: non-finite entries")
        return None
    return arr


def parse(raw: dict) -> ProblemFile:
    errors = _schema_errors(raw, TOP_SCHEMA)
    if errors:
        raise ProblemFileError(errors)
    kind, fam = raw["kind"], raw["family"]
    if fam not in FAMILIES[kind]:
        raise ProblemFileError([f"family: unknown family {fam!r} for kind {kind!r} "
                                f"(known: {', '.join(FAMILIES[kind])})"])
    schema = PARAM_SCHEMAS[kind] if kind in ("discrete", "sde") else PARAM_SCHEMAS[fam]
    errors = _schema_errors(raw["params"], schema, "params")
    if errors:
        raise ProblemFileError(errors)
    pf = ProblemFile(raw, kind, fam, int(raw.get("seed", 0)), dict(raw.get("tolerances", {})),
                     digest(raw))
    builder = {"discrete": _build_discrete, "sde": _build_sde, "regularity": _build_regularity}[kind]
    builder(pf, raw["params"])
    return pf


def load_problem(path) -> ProblemFile:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ProblemFileError([f"{path}: {exc.strerror}"]) from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ProblemFileError([f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}"]) from exc
    return parse(raw)


def _noise(params, N, d, errors):
    desc = params.get("noise", {"kind": "rademacher"})
    if desc.get("kind", "rademacher") == "rademacher" and "support" not in desc:
        return NoiseSpec.rademacher(d, N)
    try:
        spec = NoiseSpec(d=d, N=N, support=desc["support"],
                         stage_overrides={int(k): v for k, v in desc.get("stage_overrides", {}).items()})
        spec.validate()
    except NoiseSpecError as exc:
        errors.append(f"params.noise: {exc}")
        return None
    except (KeyError, TypeError, ValueError) as exc:
        errors.append(f"params.noise: malformed support ({exc})")
        return None
    return spec


def _sets(params, m, errors):
    controls = initial = None
    try:
        controls = controlsets.from_descriptor(params.get("controls"), m)
    except (KeyError, TypeError, ValueError) as exc:
        errors.append(f"params.controls: {exc}")
    if "initial_set" in params:
        try:
            initial = set_from_descriptor(params["initial_set"])
        except (KeyError, TypeError, ValueError) as exc:
            errors.append(f"params.initial_set: {exc}")
    return controls, initial


def _lq_arrays(params, N, n, m, d, errors, terminal_key):
    per = lambda s: [s, (N,) + s] if N else [s]  # noqa: E731
    out = {
        "x0": _shape(params, "x0", [(n,)], errors),
        "A": _shape(params, "A", per((n, n)), errors),
        "B": _shape(params, "B", per((n, m)), errors),
        "Q": _shape(params, "Q", per((n, n)), errors),
        "R": _shape(params, "R", per((m, m)), errors),
        terminal_key: _shape(params, terminal_key, [(n, n)], errors),
        "C": _shape(params, "C", per((d, n, n)), errors),
        "D": _shape(params, "D", per((d, n, m)), errors),
    }
    return out


def _build_discrete(pf, params):
    N, n, m, d = (int(params[k]) for k in ("N", "n", "m", "d"))
    errors = []
    arrs = _lq_arrays(params, N, n, m, d, errors, "QN")
    noise = _noise(params, N, d, errors)
    controls, initial = _sets(params, m, errors)
    if "u" in params:
        try:
            pf.extras["u"] = [np.asarray(uk, float) for uk in params["u"]]
        except (TypeError, ValueError):
            errors.append("params.u: not a list of numeric arrays")
    if errors:
        raise ProblemFileError(errors)
    kw = dict(C=arrs["C"], D=arrs["D"], controls=controls, initial_set=initial,
              c1=params.get("c1"), c2=params.get("c2"), name=pf.raw.get("name", pf.family))
    if pf.family == "catalog_nonlinear":
        kw.update(beta=params.get("beta", 0.1), gamma=params.get("gamma", 0.1), eta=params.get("eta", 0.1))
        fn = families.catalog_nonlinear
    else:
        fn = families.linear_quadratic
    pf.problem = fn(N, n, m, d, arrs["x0"], arrs["A"], arrs["B"], arrs["Q"], arrs["R"], arrs["QN"], **kw)
    pf.noise = noise


def _build_sde(pf, params):
    errors = []
    x0 = np.atleast_1d(np.asarray(params["x0"], float))
    n = x0.size
    B = np.asarray(params["B"], float)
    m = B.shape[1] if B.ndim == 2 else 1
    d = next((len(params[k]) for k in ("C", "D", "s") if k in params), 1)
    arrs = _lq_arrays(params, 0, n, m, d, errors, "QT")
    s = _shape(params, "s", [(d, n)], errors)
    controls, initial = _sets(params, m, errors)
    if errors:
        raise ProblemFileError(errors)
    kw = dict(C=arrs["C"], D=arrs["D"], s=s, controls=controls, initial_set=initial,
              name=pf.raw.get("name", pf.family))
    if pf.family == "catalog_nonlinear_sde":
        kw.update(beta=params.get("beta", 0.1), gamma=params.get("gamma", 0.1), eta=params.get("eta", 0.1))
        fn = bridge.catalog_nonlinear_sde
    else:
        fn = bridge.lq_sde
    pf.problem = fn(params["T"], arrs["x0"], arrs["A"], arrs["B"], arrs["Q"], arrs["R"], arrs["QT"], **kw)
    Ns = params["N"] if isinstance(params["N"], list) else [params["N"]]
    for N in Ns:
        nodes = sum((2 ** d) ** k for k in range(N + 1))
        if nodes > bridge.NODE_BUDGET:
            raise ProblemFileError([f"params.N: N={N} needs {nodes} tree nodes, over the budget "
                                    f"of {bridge.NODE_BUDGET}"])
    pf.extras["N"] = [int(N) for N in Ns]


def _build_regularity(pf, params):
    if pf.family == "circles":
        pf.problem = reg_examples.circles_system(params.get("alpha1", 2.0), params.get("alpha2", 2.0),
                                                 params.get("r", 0.5))
        pf.extras["rho"] = params.get("rho", [0.1, 0.01, 0.001])
        return
    if pf.family == "brokate":
        n = int(params.get("n", 5))
        pf.problem = reg_examples.brokate_system(n)
        pf.extras["n_max"] = int(params.get("n_max", n))
        return
    errors = []
    x0 = np.atleast_1d(np.asarray(params["x0"], float))
    try:
        C = set_from_descriptor(params["C"], x0.size)
    except (KeyError, TypeError, ValueError) as exc:
        errors.append(f"params.C: {exc}")
        C = None
    mp = params["map"]
    G = c = None
    if mp["kind"] == "linear":
        if "G" not in mp:
            errors.append("params.map.G: required for a linear map")
        else:
            G = np.atleast_2d(np.asarray(mp["G"], float))
            if G.shape[1] != x0.size:
                errors.append(f"params.map.G: expected {x0.size} columns, got {G.shape[1]}")
            c = np.zeros(G.shape[0]) if "c" not in mp else np.asarray(mp["c"], float)
            if c.shape != (G.shape[0],):
                errors.append(f"params.map.c: expected shape ({G.shape[0]},), got {c.shape}")
    q = x0.size if mp["kind"] == "identity" else (G.shape[0] if G is not None else 0)
    try:
        D = set_from_descriptor(params["D"], q)
    except (KeyError, TypeError, ValueError) as exc:
        errors.append(f"params.D: {exc}")
        D = None
    for label, S, dim in (("C", C, x0.size), ("D", D, q)):
        if S is not None and S.dim is not None and S.dim != dim:
            errors.append(f"params.{label}: set dimension {S.dim} does not match {dim}")
    gf = None
    if "grad_f" in params:
        gf = np.asarray(params["grad_f"], float)
        if gf.shape != x0.shape:
            errors.append(f"params.grad_f: expected shape {x0.shape}, got {gf.shape}")
    if errors:
        raise ProblemFileError(errors)
    kw = {k: params[k] for k in ("K_f", "a", "alpha", "alpha1", "alpha2", "r") if k in params}
    if gf is not None:
        kw.update(f=lambda x: float(gf @ x), grad_f=lambda x: gf)
        kw.setdefault("K_f", float(np.linalg.norm(gf)))
    if mp["kind"] == "identity":
        sys_ = ConstraintSystem.identity_map(C, D, x0, name=pf.raw.get("name", "system"), **kw)
    else:
        if "K_g" in params:
            kw["K_g"] = params["K_g"]
        sys_ = ConstraintSystem.linear(G, c, C, D, x0, name=pf.raw.get("name", "system"), **kw)
    try:
        sys_.check_base_point(1e-9)
    except ValueError as exc:
        raise ProblemFileError([f"params.x0: {exc}"]) from exc
    pf.problem = sys_
    pf.extras["variant"] = params.get("variant")
    pf.extras["mode"] = params.get("mode")

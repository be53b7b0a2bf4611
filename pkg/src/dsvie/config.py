"""Strict experiment configuration: documented JSON schema, rejected extras.

The schema is shipped in schema/experiment-config.schema.json; every key
is validated here with documented ranges, and unknown keys anywhere are
errors. A config names a corpus problem; kind is cross-checked against
the registry entry.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .corpus import PROBLEMS
from .errors import ConfigError
from .regression import RegressionBasis

KINDS = ("simple", "picard", "fdsvie", "compare", "continuous", "duality", "control", "fbdsvie")

_TOP_KEYS = {
    "kind", "problem", "grid", "batch", "basis", "solver",
    "tolerances", "overrides", "output_dir", "dump_fields",
}
_GRID_KEYS = {"T", "N"}
_BATCH_KEYS = {"paths", "seed", "d", "l"}
_BASIS_KEYS = {"kind", "degree", "features", "ridge"}
_SOLVER_KEYS = {"tol", "max_iter", "beta", "max_outer"}

_RANGES = {
    "T": (1e-9, 1e6),
    "N": (1, 8192),
    "paths": (1, 2_000_000),
    "degree": (0, 8),
    "ridge": (0.0, 1.0),
    "tol": (1e-14, 1.0),
    "max_iter": (1, 10_000),
    "max_outer": (1, 1_000),
}


@dataclass
class ExperimentConfig:
    kind: str
    problem: str
    T: float = 1.0
    N: int = 32
    paths: int = 20_000
    seed: int = 0
    d: int = 1
    l: int = 1
    basis_kind: str = "polynomial"
    degree: int = 2
    features: tuple = ("W", "B_tail")
    ridge: float = 1e-8
    solver: dict = field(default_factory=dict)
    tolerances: dict = field(default_factory=dict)
    overrides: dict = field(default_factory=dict)
    output_dir: str | None = None
    dump_fields: bool = False
    raw: dict = field(default_factory=dict)

    def basis(self) -> RegressionBasis:
        return RegressionBasis(
            kind=self.basis_kind, degree=self.degree, features=self.features, ridge=self.ridge
        )


def _reject_unknown(section: dict, allowed: set, where: str) -> None:
    extra = set(section) - allowed
    if extra:
        raise ConfigError(f"unknown key(s) in {where}: {sorted(extra)}")


def _in_range(name: str, value) -> None:
    lo, hi = _RANGES[name]
    if not (lo <= value <= hi):
        raise ConfigError(f"{name} = {value!r} outside documented range [{lo}, {hi}]")


def _number(section: dict, key: str, default, where: str, integer=False):
    value = section.get(key, default)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{where}.{key} must be a number, got {value!r}")
    if integer and int(value) != value:
        raise ConfigError(f"{where}.{key} must be an integer, got {value!r}")
    return int(value) if integer else float(value)


def parse_config(doc: dict) -> ExperimentConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config document must be a JSON object")
    _reject_unknown(doc, _TOP_KEYS, "config")
    kind = doc.get("kind")
    if kind not in KINDS:
        raise ConfigError(f"kind must be one of {KINDS}, got {kind!r}")
    problem = doc.get("problem")
    if not isinstance(problem, str):
        raise ConfigError("problem must name a corpus entry")
    if problem not in PROBLEMS:
        raise ConfigError(f"unknown problem {problem!r}; see the corpus listing")
    if PROBLEMS[problem].kind != kind:
        raise ConfigError(
            f"problem {problem!r} has kind {PROBLEMS[problem].kind!r}, config says {kind!r}"
        )

    grid = doc.get("grid", {})
    _reject_unknown(grid, _GRID_KEYS, "grid")
    T = _number(grid, "T", 1.0, "grid")
    N = _number(grid, "N", 32, "grid", integer=True)
    _in_range("T", T)
    _in_range("N", N)

    batch = doc.get("batch", {})
    _reject_unknown(batch, _BATCH_KEYS, "batch")
    paths = _number(batch, "paths", 20_000, "batch", integer=True)
    seed = _number(batch, "seed", 0, "batch", integer=True)
    d = _number(batch, "d", 1, "batch", integer=True)
    l = _number(batch, "l", 1, "batch", integer=True)
    _in_range("paths", paths)
    if d != 1 or l != 1:
        raise ConfigError("experiments are one-dimensional: batch.d and batch.l must be 1")

    basis = doc.get("basis", {})
    _reject_unknown(basis, _BASIS_KEYS, "basis")
    basis_kind = basis.get("kind", "polynomial")
    if basis_kind not in ("polynomial", "piecewise-constant"):
        raise ConfigError(f"basis.kind must be polynomial or piecewise-constant, got {basis_kind!r}")
    degree = _number(basis, "degree", 2, "basis", integer=True)
    ridge = _number(basis, "ridge", 1e-8, "basis")
    _in_range("degree", degree)
    _in_range("ridge", ridge)
    features = basis.get("features", ["W", "B_tail"])
    if not isinstance(features, list) or not features:
        raise ConfigError("basis.features must be a non-empty list")
    for f in features:
        if f not in ("W", "B_tail", "B"):
            raise ConfigError(f"unknown basis feature {f!r} (allowed: W, B_tail, B)")

    solver = doc.get("solver", {})
    _reject_unknown(solver, _SOLVER_KEYS, "solver")
    solver_out: dict = {}
    if "tol" in solver:
        solver_out["tol"] = _number(solver, "tol", 1e-3, "solver")
        _in_range("tol", solver_out["tol"])
    if "max_iter" in solver:
        solver_out["max_iter"] = _number(solver, "max_iter", 30, "solver", integer=True)
        _in_range("max_iter", solver_out["max_iter"])
    if "max_outer" in solver:
        solver_out["max_outer"] = _number(solver, "max_outer", 12, "solver", integer=True)
        _in_range("max_outer", solver_out["max_outer"])
    if "beta" in solver:
        beta = solver["beta"]
        if beta != "auto":
            if not isinstance(beta, (int, float)) or isinstance(beta, bool) or beta <= 0:
                raise ConfigError("solver.beta must be 'auto' or a positive number")
            beta = float(beta)
        solver_out["beta"] = beta

    tolerances = doc.get("tolerances", {})
    if not isinstance(tolerances, dict):
        raise ConfigError("tolerances must be an object")
    for key, value in tolerances.items():
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"tolerances.{key} must be numeric, got {value!r}")

    overrides = doc.get("overrides", {})
    if not isinstance(overrides, dict):
        raise ConfigError("overrides must be an object")
    if "alpha" in overrides:
        alpha = overrides["alpha"]
        bound = 1.0 / (T + 2.0)
        if isinstance(alpha, bool) or not isinstance(alpha, (int, float)) or not 0 <= alpha < bound:
            raise ConfigError(
                f"overrides.alpha = {alpha!r} violates the well-posedness bound "
                f"0 <= alpha < 1/(T+2) = {bound:.6g}"
            )
    if "c" in overrides:
        c = overrides["c"]
        if isinstance(c, bool) or not isinstance(c, (int, float)) or c < 0:
            raise ConfigError(f"overrides.c must be a nonnegative number, got {c!r}")

    output_dir = doc.get("output_dir")
    if output_dir is not None and not isinstance(output_dir, str):
        raise ConfigError("output_dir must be a string path")
    dump_fields = doc.get("dump_fields", False)
    if not isinstance(dump_fields, bool):
        raise ConfigError("dump_fields must be a boolean")

    return ExperimentConfig(
        kind=kind,
        problem=problem,
        T=T,
        N=N,
        paths=paths,
        seed=seed,
        d=d,
        l=l,
        basis_kind=basis_kind,
        degree=degree,
        features=tuple(features),
        ridge=ridge,
        solver=solver_out,
        tolerances=dict(tolerances),
        overrides=dict(overrides),
        output_dir=output_dir,
        dump_fields=dump_fields,
        raw=doc,
    )


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return parse_config(doc)

"""Scenario files: parsing, validation and construction of solver inputs.

A scenario is a TOML or JSON document with the tables ``problem``, ``grid``,
``datum``, ``forcing``, ``solver`` and ``probes`` plus an optional integer
``seed``.  Validation errors carry the dotted path of the offending key.
"""
from __future__ import annotations

import ast
import copy
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np

from .field import CoefficientMatrix, Field, Grid, lebesgue_norm, load_field, power_law_datum
from .regime import DomainError, ProblemExponents, Regime, classify, regime_of
from .solver import PLaplacian, RHSSpec, SolverConfig

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - depends on interpreter
    import tomli as tomllib


class ScenarioError(DomainError):
    """Schema or consistency violation; ``path`` names the offending key."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


# ---------------------------------------------------------------------------
# restricted expressions

_FUNCS = {
    "sin": np.sin, "cos": np.cos, "tan": np.tan, "exp": np.exp, "log": np.log,
    "sqrt": np.sqrt, "abs": np.abs, "tanh": np.tanh, "minimum": np.minimum,
    "maximum": np.maximum, "where": np.where,
}
_CONSTS = {"pi": math.pi, "e": math.e}
_VARS = ("x", "y", "z", "r", "t")
_NODES = (
    ast.Expression, ast.BinOp, ast.UnaryOp, ast.Constant, ast.Name, ast.Load, ast.Call,
    ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow, ast.USub, ast.UAdd, ast.Mod,
    ast.Compare, ast.Lt, ast.LtE, ast.Gt, ast.GtE,
)


def compile_expression(text: str, path: str = "expression"):
    """Validate an arithmetic expression in x, y, z, r, t and return a callable."""
    try:
        tree = ast.parse(text, mode="eval")
    except SyntaxError as exc:
        raise ScenarioError(path, f"cannot parse expression: {exc.msg}") from None
    for node in ast.walk(tree):
        if not isinstance(node, _NODES):
            raise ScenarioError(path, f"disallowed syntax {type(node).__name__}")
        if isinstance(node, ast.Name) and node.id not in _FUNCS and node.id not in _CONSTS and node.id not in _VARS:
            raise ScenarioError(path, f"unknown name {node.id!r}")
        if isinstance(node, ast.Call) and not (isinstance(node.func, ast.Name) and node.func.id in _FUNCS):
            raise ScenarioError(path, "only whitelisted functions may be called")
        if isinstance(node, ast.Constant) and not isinstance(node.value, (int, float)):
            raise ScenarioError(path, "only numeric constants are allowed")
    code = compile(tree, path, "eval")

    def evaluate(**env):
        ns = {"__builtins__": {}, **_FUNCS, **_CONSTS, **env}
        return eval(code, ns)  # noqa: S307 - AST checked above

    return evaluate


def _bump(s):
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    inside = s < 1
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - s[inside] ** 2))
    return out


def _env(grid: Grid) -> dict:
    if grid.mode == "radial":
        r = grid.axes[0]
        return {"x": r, "y": np.zeros_like(r), "z": np.zeros_like(r), "r": r}
    names = ("x", "y", "z")
    env = {n: np.zeros(grid.shape) for n in names}
    for n, c in zip(names, grid.coords):
        env[n] = c
    env["r"] = grid.radius
    return env


# ---------------------------------------------------------------------------
# schema helpers


def _table(d: dict, key: str, path: str) -> dict:
    v = d.get(key, {})
    if not isinstance(v, dict):
        raise ScenarioError(f"{path}{key}", "expected a table")
    return v


def _num(d: dict, key: str, path: str, default: Any = None, required: bool = False, positive: bool = False) -> Any:
    if key not in d:
        if required:
            raise ScenarioError(f"{path}.{key}", "missing required key")
        return default
    v = d[key]
    if isinstance(v, str) and v.lower() in ("inf", "infinity"):
        v = math.inf
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ScenarioError(f"{path}.{key}", f"expected a number, got {v!r}")
    if positive and not v > 0:
        raise ScenarioError(f"{path}.{key}", "must be positive")
    return v


def _check_keys(d: dict, allowed: set, path: str) -> None:
    for k in d:
        if k not in allowed:
            raise ScenarioError(f"{path}.{k}", "unknown key")


DATUM_KINDS = ("zero", "bump", "sine", "power_law", "expression", "file")
FORCING_KINDS = ("zero", "constant", "bump", "spike", "expression", "file")
PROBES = {"ledger", "marcinkiewicz", "gn", "comparison", "weak_residual", "refinement_levels", "mms"}
SOLVER_KEYS = set(SolverConfig.__dataclass_fields__) | {"fixed_dt"}


@dataclass
class Scenario:
    name: str
    N: int
    p: float
    q: float
    gamma: float
    grid: dict
    datum: dict
    forcing: dict = field(default_factory=lambda: {"kind": "zero"})
    solver: dict = field(default_factory=dict)
    probes: dict = field(default_factory=lambda: {"ledger": True})
    seed: int = 0
    regime: Optional[str] = None
    m: Optional[float] = None
    coefficient: Optional[dict] = None
    base_dir: str = "."

    # -- construction ------------------------------------------------------

    @classmethod
    def from_dict(cls, d: dict, base_dir: str = ".") -> "Scenario":
        if not isinstance(d, dict):
            raise ScenarioError("<root>", "expected a table")
        _check_keys(d, {"name", "problem", "grid", "datum", "forcing", "solver", "probes", "seed", "coefficient"}, "<root>")
        prob = _table(d, "problem", "")
        _check_keys(prob, {"N", "p", "q", "gamma", "regime", "m"}, "problem")
        grid = dict(_table(d, "grid", ""))
        _check_keys(grid, {"mode", "cells", "extent", "T"}, "grid")
        mode = grid.get("mode", "cartesian")
        if mode not in ("cartesian", "radial"):
            raise ScenarioError("grid.mode", "must be 'cartesian' or 'radial'")
        N = _num(prob, "N", "problem", required=True)
        if not isinstance(N, int) or N < 1:
            raise ScenarioError("problem.N", "must be a positive integer")
        cells = grid.get("cells")
        if cells is None:
            raise ScenarioError("grid.cells", "missing required key")
        if isinstance(cells, int):
            cells = [cells] if mode == "radial" else [cells] * N
        if not isinstance(cells, list) or not all(isinstance(c, int) and c >= 2 for c in cells):
            raise ScenarioError("grid.cells", "expected an integer >= 2 or a list of them")
        if mode == "cartesian" and len(cells) != N:
            raise ScenarioError("grid.cells", f"cartesian grids need N={N} axes, got {len(cells)}")
        if mode == "radial" and (len(cells) != 1 or N < 2):
            raise ScenarioError("grid.cells" if len(cells) != 1 else "problem.N", "radial mode needs one axis and N >= 2")
        grid = {
            "mode": mode, "cells": cells,
            "extent": float(_num(grid, "extent", "grid", 1.0, positive=True)),
            "T": float(_num(grid, "T", "grid", 0.1, positive=True)),
        }
        p = float(_num(prob, "p", "problem", required=True))
        q = float(_num(prob, "q", "problem", required=True))
        gamma = float(_num(prob, "gamma", "problem", 1.0))
        m = _num(prob, "m", "problem", None)
        declared = prob.get("regime")
        if gamma < 0:
            raise ScenarioError("problem.gamma", "must be >= 0")
        if p <= 1 or q <= 0:
            raise ScenarioError("problem.p" if p <= 1 else "problem.q", "need p > 1 and q > 0")
        actual = None
        try:
            # classification ignores gamma; gamma = 0 (pure diffusion) may sit outside 1 < p < N
            ProblemExponents(N, p, q, 1.0)
            actual = regime_of(N, p, q)
        except DomainError as exc:
            if gamma > 0 or declared is not None:
                raise ScenarioError(_error_key(str(exc)), str(exc)) from None
        if declared is not None:
            names = {r.value: r for r in Regime} | {r.name: r for r in Regime}
            if declared not in names:
                raise ScenarioError("problem.regime", f"unknown regime {declared!r}")
            if names[declared] is not actual:
                raise ScenarioError(
                    "problem.regime", f"declared {declared} but (N, p, q) = ({N}, {p}, {q}) is {actual.value}"
                )
        if actual is Regime.NATURAL_GROWTH and gamma > 0:
            raise ScenarioError("problem.q", "q = p (natural growth) is not supported by the solver")

        datum = dict(_table(d, "datum", ""))
        kind = datum.get("kind", "bump")
        if kind not in DATUM_KINDS:
            raise ScenarioError("datum.kind", f"must be one of {DATUM_KINDS}")
        datum["kind"] = kind
        if kind == "power_law":
            _num(datum, "eta", "datum", required=True, positive=True)
            _num(datum, "omega", "datum", 0.01)
        if kind == "sine" and mode != "cartesian":
            raise ScenarioError("datum.kind", "sine data need cartesian mode")
        if kind == "expression":
            if not isinstance(datum.get("expr"), str):
                raise ScenarioError("datum.expr", "expected an expression string")
            compile_expression(datum["expr"], "datum.expr")
        if kind == "file" and not isinstance(datum.get("path"), str):
            raise ScenarioError("datum.path", "expected a file path")
        norm = datum.get("normalize")
        if norm is not None:
            if not isinstance(norm, dict):
                raise ScenarioError("datum.normalize", "expected a table")
            _num(norm, "exponent", "datum.normalize", required=True, positive=True)
            _num(norm, "value", "datum.normalize", required=True, positive=True)

        forcing = dict(_table(d, "forcing", "")) or {"kind": "zero"}
        fk = forcing.get("kind", "zero")
        if fk not in FORCING_KINDS:
            raise ScenarioError("forcing.kind", f"must be one of {FORCING_KINDS}")
        forcing["kind"] = fk
        if fk == "spike":
            _num(forcing, "m", "forcing", required=True, positive=True)
            _num(forcing, "j", "forcing", 1, positive=True)
        if fk == "expression":
            if not isinstance(forcing.get("expr"), str):
                raise ScenarioError("forcing.expr", "expected an expression string")
            compile_expression(forcing["expr"], "forcing.expr")

        solver = dict(_table(d, "solver", ""))
        _check_keys(solver, SOLVER_KEYS, "solver")
        try:
            SolverConfig.from_dict({k: v for k, v in solver.items() if k != "fixed_dt"})
        except (TypeError, DomainError) as exc:
            raise ScenarioError("solver", str(exc)) from None

        probes = dict(_table(d, "probes", "")) or {"ledger": True}
        _check_keys(probes, PROBES, "probes")
        levels = probes.get("refinement_levels", 1)
        if not isinstance(levels, int) or levels < 1:
            raise ScenarioError("probes.refinement_levels", "expected a positive integer")

        coef = d.get("coefficient")
        if coef is not None:
            if not isinstance(coef, dict):
                raise ScenarioError("coefficient", "expected a table")
            a = _num(coef, "alpha", "coefficient", required=True, positive=True)
            L = _num(coef, "Lambda", "coefficient", required=True, positive=True)
            if L < a:
                raise ScenarioError("coefficient.Lambda", "must be >= alpha")
            if mode == "radial":
                raise ScenarioError("coefficient", "matrix coefficients need cartesian mode")
        seed = d.get("seed", 0)
        if isinstance(seed, bool) or not isinstance(seed, int):
            raise ScenarioError("seed", "expected an integer")
        name = d.get("name", "scenario")
        if not isinstance(name, str):
            raise ScenarioError("name", "expected a string")
        return cls(
            name=name, N=N, p=p, q=q, gamma=gamma, grid=grid, datum=datum, forcing=forcing,
            solver=solver, probes=probes, seed=seed, regime=actual.value if actual else None, m=m, coefficient=coef,
            base_dir=str(base_dir),
        )

    def to_dict(self) -> dict:
        """Resolved configuration, suitable for manifests and re-parsing."""
        prob = {"N": self.N, "p": self.p, "q": self.q, "gamma": self.gamma, "regime": self.regime}
        if self.m is not None:
            prob["m"] = self.m
        out = {
            "name": self.name, "problem": prob, "grid": copy.deepcopy(self.grid),
            "datum": copy.deepcopy(self.datum), "forcing": copy.deepcopy(self.forcing),
            "solver": copy.deepcopy(self.solver), "probes": copy.deepcopy(self.probes), "seed": self.seed,
        }
        if self.coefficient is not None:
            out["coefficient"] = copy.deepcopy(self.coefficient)
        return _jsonable(out)

    def content_hash(self) -> str:
        h = hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode())
        for table in (self.datum, self.forcing):
            if table.get("kind") == "file":
                h.update(self._resolve(table["path"]).read_bytes())
        return h.hexdigest()

    def with_updates(self, **changes) -> "Scenario":
        """A copy with dotted-key overrides, e.g. ``{"problem.q": 1.2}``, revalidated."""
        d = self.to_dict()
        d["problem"].pop("regime", None)
        for key, value in changes.items():
            parts = key.split(".")
            tgt = d
            for part in parts[:-1]:
                tgt = tgt.setdefault(part, {})
            tgt[parts[-1]] = value
        return Scenario.from_dict(d, self.base_dir)

    def refined(self, level: int) -> "Scenario":
        s = copy.deepcopy(self)
        s.grid["cells"] = [c * 2 ** level for c in s.grid["cells"]]
        return s

    # -- solver inputs -----------------------------------------------------

    @property
    def exponents(self) -> ProblemExponents:
        return ProblemExponents(self.N, self.p, self.q, self.gamma or 1.0)

    def report(self):
        if self.regime is None:
            return None
        return classify(self.exponents, self.m)

    def make_grid(self) -> Grid:
        g = self.grid
        if g["mode"] == "radial":
            return Grid.radial(g["cells"][0], self.N, g["extent"], g["T"])
        return Grid.cartesian(tuple(g["cells"]), extent=g["extent"], T=g["T"])

    def _resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def make_datum(self, grid: Grid, scale: float = 1.0) -> Field:
        d = self.datum
        kind = d["kind"]
        amp = float(d.get("amplitude", 1.0))
        if kind == "zero":
            u = np.zeros(grid.size)
        elif kind == "bump":
            radius = float(d.get("radius", 0.3 * grid.extent))
            u = amp * _bump(grid.radius / radius).ravel()
        elif kind == "sine":
            u = amp * np.prod([np.sin(math.pi * c / grid.extent) for c in grid.coords], axis=0).ravel()
        elif kind == "power_law":
            cutoff = float(d.get("cutoff", min(1.0, grid.extent / (1 if grid.mode == "radial" else 2))))
            u = power_law_datum(grid, float(d["eta"]), float(d.get("omega", 0.01)), amp, cutoff).flat
        elif kind == "expression":
            fn = compile_expression(d["expr"], "datum.expr")
            u = np.broadcast_to(amp * np.asarray(fn(**_env(grid), t=0.0), dtype=float), grid.shape).ravel()
        else:
            u = _read_field(self._resolve(d["path"]), grid, "datum.path")
        norm = d.get("normalize")
        if norm is not None:
            cur = lebesgue_norm(Field(grid, u), float(norm["exponent"]))
            if cur > 0:
                u = u * (float(norm["value"]) / cur)
        return Field(grid, scale * u)

    def make_forcing(self, grid: Grid, scale: float = 1.0):
        f = self.forcing
        kind = f["kind"]
        amp = float(f.get("amplitude", 1.0)) * scale
        if kind == "zero":
            return None
        if kind == "constant":
            return np.full(grid.size, amp * float(f.get("value", 1.0)))
        radius = float(f.get("radius", 0.3 * grid.extent))
        if kind == "bump":
            return amp * _bump(grid.radius / radius).ravel()
        if kind == "spike":
            j = float(f.get("j", 1))
            m = float(f["m"])
            return amp * j ** (self.N / m) * _bump(j * grid.radius / radius).ravel()
        if kind == "expression":
            fn = compile_expression(f["expr"], "forcing.expr")
            env = _env(grid)
            if "t" in f["expr"]:
                return lambda t: np.broadcast_to(amp * np.asarray(fn(**env, t=t), dtype=float), grid.shape).ravel()
            return np.broadcast_to(amp * np.asarray(fn(**env, t=0.0), dtype=float), grid.shape).ravel()
        return amp * _read_field(self._resolve(f["path"]), grid, "forcing.path")

    def make_solver_config(self) -> SolverConfig:
        kw = {k: v for k, v in self.solver.items() if k != "fixed_dt"}
        return SolverConfig.from_dict(kw)

    @property
    def fixed_dt(self) -> Optional[float]:
        v = self.solver.get("fixed_dt")
        return None if v is None else float(v)

    def make_operator(self, grid: Grid) -> PLaplacian:
        c = self.coefficient
        if c is None:
            return PLaplacian(self.p)
        A = CoefficientMatrix.random(grid, float(c["alpha"]), float(c["Lambda"]), seed=int(c.get("seed", self.seed)))
        return PLaplacian(self.p, A)

    def make_rhs(self, grid: Grid, data_scale: float = 1.0) -> RHSSpec:
        return RHSSpec(self.gamma, self.q, self.make_forcing(grid, data_scale))


def _error_key(message: str) -> str:
    if message.startswith("dimension"):
        return "problem.N"
    if "supernatural" in message or "q > 0" in message:
        return "problem.q"
    return "problem.p"


def _read_field(path: Path, grid: Grid, key: str) -> np.ndarray:
    if not path.exists():
        raise ScenarioError(key, f"file not found: {path}")
    if path.suffix == ".csv":
        arr = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)[:, -1]
    else:
        arr = load_field(path).flat
    if arr.size != grid.size:
        raise ScenarioError(key, f"file holds {arr.size} values, grid has {grid.size} cells")
    return np.asarray(arr, dtype=float)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, float) and math.isinf(obj):
        return "inf" if obj > 0 else "-inf"
    return obj


def parse_document(path) -> dict:
    path = Path(path)
    text = path.read_bytes()
    try:
        if path.suffix == ".json":
            return json.loads(text)
        return tomllib.loads(text.decode())
    except (ValueError, tomllib.TOMLDecodeError) as exc:
        raise ScenarioError("<root>", f"cannot parse {path.name}: {exc}") from None


def load_scenario(path) -> Scenario:
    path = Path(path)
    return Scenario.from_dict(parse_document(path), base_dir=str(path.parent))

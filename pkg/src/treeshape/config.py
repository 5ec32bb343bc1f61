"""Scenario configuration: one JSON document per run.

Top-level shape::

    {"mode": "...", "seed": 0, "output_dir": "out", "problem": {...}, "solver": {...}}

``problem`` and ``solver`` depend on the mode; see FORMATS.md.  Parsing
fills documented defaults and reports every problem found, each with the
key path it concerns.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import jsonschema
import numpy as np

from .irrigation import MAX_EXHAUSTIVE_ATOMS

__all__ = ["MODES", "ConfigIssue", "ConfigError", "ScenarioConfig", "parse_config",
           "parse_config_data", "SCHEMAS"]

MODES = ("sunlight", "irrigate", "harvest", "optimize-branches", "optimize-roots", "selftest")
SIDES = ["left", "right", "bottom", "top"]
SEED_LIMIT = 2 ** 64


def _num(**kw):
    return {"type": "number", **kw}


def _arr(items, **kw):
    return {"type": "array", "items": items, **kw}


def _obj(props, required=(), **kw):
    return {"type": "object", "properties": props, "required": list(required),
            "additionalProperties": False, **kw}


_POINT = _arr(_num(), minItems=2, maxItems=3)
_BOX = _obj({"lower": _POINT, "upper": _POINT}, ["lower", "upper"])
_MEASURE = _obj({"d": {"type": "integer", "minimum": 2, "maximum": 3},
                 "atoms": _arr(_obj({"x": _POINT, "m": _num(exclusiveMinimum=0)}, ["x", "m"]))},
                ["atoms"])
# exactly one of constant / measure / csv (checked after the schema)
_DENSITY = {"type": ["object", "null"],
            "properties": {"constant": _num(minimum=0), "measure": _MEASURE,
                           "smear_radius": _num(exclusiveMinimum=0),
                           "csv": {"type": "string"}},
            "additionalProperties": False}
# either hemisphere sampling or explicit directions; optional overall scale
_LIGHT = _obj({"hemisphere": {"type": "integer", "minimum": 1},
               "directions": _arr(_POINT, minItems=1),
               "weights": _arr(_num(exclusiveMinimum=0), minItems=1),
               "scale": _num(exclusiveMinimum=0, default=1.0)})
_RES = _arr({"type": "integer", "minimum": 1}, minItems=2, maxItems=3)
_REACTION = _obj({"a": {"type": ["number", "array"]}, "b": _num(exclusiveMinimum=0),
                  "M": _num(exclusiveMinimum=0), "family": {"enum": ["affine"], "default": "affine"}},
                 ["a", "b", "M"])
_SIDES = _arr({"enum": SIDES}, uniqueItems=True, default=list(SIDES))
_ALPHA = _num()   # range checked semantically so the message can name the condition

_ANNEAL = {
    "budget": {"type": "integer", "minimum": 1, "default": 2000},
    "proposals": _arr({"enum": ["move", "split", "merge", "transfer"]}, minItems=1,
                      uniqueItems=True, default=["move", "split", "merge", "transfer"]),
    "max_atoms": {"type": "integer", "minimum": 1, "default": 12},
    "initial": {"anyOf": [_MEASURE, {"type": "null"}], "default": None},
    "step": {"type": ["number", "null"], "exclusiveMinimum": 0, "default": None},
    "temperature": {"type": ["number", "null"], "minimum": 0, "default": None},
    "max_proposals_factor": {"type": "integer", "minimum": 1, "default": 20},
    "irrigation_tol": _num(exclusiveMinimum=0, default=1e-6),
    "irrigation_max_iter": {"type": "integer", "minimum": 1, "default": 200},
    "irrigation_moves": {"type": "integer", "minimum": 0, "default": 0},
}

SCHEMAS = {
    "sunlight": (
        _obj({"domain": _BOX, "resolution": _RES, "density": _DENSITY,
              "obstacle": {**_DENSITY, "default": None}, "light": _LIGHT,
              "pixel_width": {"type": ["number", "null"], "exclusiveMinimum": 0, "default": None}},
             ["domain", "resolution", "density", "light"]),
        _obj({})),
    "irrigate": (
        _obj({"measure": _MEASURE, "alpha": _ALPHA}, ["measure", "alpha"]),
        _obj({"mode": {"enum": ["exhaustive", "heuristic"], "default": "exhaustive"},
              "tol": _num(exclusiveMinimum=0, default=1e-10),
              "max_iter": {"type": "integer", "minimum": 1, "default": 20000},
              "moves": {"type": ["integer", "null"], "minimum": 0, "default": None}})),
    "harvest": (
        _obj({"domain": _BOX, "resolution": _RES, "dirichlet_sides": _SIDES,
              "reaction": _REACTION, "bc": {"enum": ["neumann", "dirichlet"], "default": "neumann"},
              "roots": {**_DENSITY, "default": None}},
             ["domain", "resolution", "reaction"]),
        _obj({"tol": _num(exclusiveMinimum=0, default=1e-8),
              "max_iter": {"type": "integer", "minimum": 1, "default": 10000},
              "shift": {"enum": ["constant", "pointwise"], "default": "constant"}})),
    "optimize-branches": (
        _obj({"domain": _BOX, "resolution": _RES, "light": _LIGHT,
              "obstacle": {**_DENSITY, "default": None},
              "c": _num(), "alpha": _ALPHA, "kappa0": _num(exclusiveMinimum=0, default=1.0),
              "smear_radius": _num(exclusiveMinimum=0)},
             ["domain", "resolution", "light", "c", "alpha", "smear_radius"]),
        _obj(dict(_ANNEAL))),
    "optimize-roots": (
        _obj({"domain": _BOX, "resolution": _RES, "dirichlet_sides": _SIDES,
              "reaction": _REACTION, "bc": {"enum": ["neumann", "dirichlet"], "default": "neumann"},
              "c": _num(minimum=0), "alpha": _ALPHA, "kappa0": _num(exclusiveMinimum=0, default=1.0),
              "smear_radius": _num(exclusiveMinimum=0)},
             ["domain", "resolution", "reaction", "c", "alpha", "smear_radius"]),
        _obj({**_ANNEAL,
              "pde_tol": _num(exclusiveMinimum=0, default=1e-8),
              "pde_max_iter": {"type": "integer", "minimum": 1, "default": 5000},
              "shift": {"enum": ["constant", "pointwise"], "default": "pointwise"}})),
    "selftest": (
        _obj({}),
        _obj({"quick": {"type": "boolean", "default": False}})),
}

_TOP = _obj({"mode": {"enum": list(MODES)},
             "seed": {"type": "integer", "minimum": 0, "maximum": SEED_LIMIT - 1, "default": 0},
             "output_dir": {"type": "string", "minLength": 1, "default": "out"},
             "problem": {"type": "object", "default": {}},
             "solver": {"type": "object", "default": {}}},
            ["mode"])


@dataclass(frozen=True)
class ConfigIssue:
    path: str
    reason: str

    def __str__(self):
        return f"{self.path or '<root>'}: {self.reason}"


class ConfigError(ValueError):
    def __init__(self, issues: list[ConfigIssue]):
        self.issues = list(issues)
        super().__init__("invalid configuration:\n" + "\n".join(f"  {i}" for i in self.issues))


@dataclass(frozen=True)
class ScenarioConfig:
    mode: str
    seed: int
    output_dir: str
    problem: dict = field(default_factory=dict)
    solver: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"mode": self.mode, "seed": self.seed, "output_dir": self.output_dir,
                "problem": copy.deepcopy(self.problem), "solver": copy.deepcopy(self.solver)}

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2)


def _path(parts) -> str:
    out = ""
    for p in parts:
        out += f"[{p}]" if isinstance(p, int) else (f".{p}" if out else str(p))
    return out


def _schema_issues(schema: dict, data: Any, prefix: tuple) -> list[ConfigIssue]:
    issues = []
    validator = jsonschema.Draft202012Validator(schema)
    for err in sorted(validator.iter_errors(data), key=lambda e: (list(map(str, e.path)), e.message)):
        parts = prefix + tuple(err.path)
        if err.validator == "additionalProperties":
            extra = sorted(set(err.instance) - set(err.schema.get("properties", {})))
            issues.extend(ConfigIssue(_path(parts + (k,)), "unknown key") for k in extra)
        elif err.validator == "required":
            missing = err.message.split("'")[1]
            issues.append(ConfigIssue(_path(parts + (missing,)), "missing required key"))
        else:
            issues.append(ConfigIssue(_path(parts), err.message))
    return issues


def _fill_defaults(schema: dict, data):
    """Insert schema defaults for absent keys, recursing into objects."""
    if not isinstance(data, dict):
        return data
    for key, sub in schema.get("properties", {}).items():
        if key not in data and "default" in sub:
            data[key] = copy.deepcopy(sub["default"])
        if key in data and isinstance(data[key], dict) and sub.get("type") == "object":
            _fill_defaults(sub, data[key])
    return data


# ---------------------------------------------------------------------------
# checks the schema cannot express

def _check_box(box, path, issues, dims=(2, 3)):
    lo, hi = box["lower"], box["upper"]
    if len(lo) != len(hi):
        issues.append(ConfigIssue(path, "lower and upper differ in dimension"))
        return None
    if len(lo) not in dims:
        issues.append(ConfigIssue(path, f"dimension {len(lo)} not supported here (allowed {list(dims)})"))
    if not all(a < b for a, b in zip(lo, hi)):
        issues.append(ConfigIssue(path, "lower must be < upper componentwise"))
        return None
    return len(lo)


def _check_origin(box, path, issues):
    if not all(a <= 0 <= b for a, b in zip(box["lower"], box["upper"])):
        issues.append(ConfigIssue(path, "the origin must lie in the closed domain"))


def _check_resolution(res, d, path, issues, least=1):
    if d is not None and len(res) != d:
        issues.append(ConfigIssue(path, f"need {d} entries, one per axis"))
    if any(r < least for r in res):
        issues.append(ConfigIssue(path, f"every axis needs at least {least} cells"))


def _check_measure(meas, d, path, issues):
    for k, atom in enumerate(meas["atoms"]):
        if d is not None and len(atom["x"]) != d:
            issues.append(ConfigIssue(f"{path}.atoms[{k}].x", f"expected {d} coordinates"))
    if "d" in meas and d is not None and meas["d"] != d:
        issues.append(ConfigIssue(f"{path}.d", f"expected {d}"))


def _check_density(dens, box, res, d, path, issues):
    if dens is None:
        return
    sources = [k for k in ("constant", "measure", "csv") if k in dens]
    if len(sources) != 1:
        issues.append(ConfigIssue(path, "give exactly one of 'constant', 'measure', 'csv'"))
        return
    if "smear_radius" in dens and "measure" not in dens:
        issues.append(ConfigIssue(f"{path}.smear_radius", "only meaningful with 'measure'"))
    if "measure" in dens:
        _check_measure(dens["measure"], d, f"{path}.measure", issues)
        if "smear_radius" not in dens:
            issues.append(ConfigIssue(f"{path}.smear_radius", "missing required key"))
        elif d is not None and len(res) == d:
            _check_smear(dens["smear_radius"], box, res, f"{path}.smear_radius", issues)


def _check_smear(radius, box, res, path, issues):
    width = max((b - a) / r for a, b, r in zip(box["lower"], box["upper"], res))
    if radius < 2 * width:
        issues.append(ConfigIssue(path, f"must be at least two cell widths ({2 * width:g})"))


def _check_light(light, d, path, issues):
    has_h = "hemisphere" in light
    has_d = "directions" in light or "weights" in light
    if has_h == has_d:
        issues.append(ConfigIssue(path, "give either 'hemisphere' or 'directions' with 'weights'"))
        return
    if has_h:
        if d not in (2, 3):
            issues.append(ConfigIssue(f"{path}.hemisphere", "hemisphere sampling needs d = 2 or 3"))
        return
    dirs, w = light.get("directions"), light.get("weights")
    if dirs is None or w is None:
        issues.append(ConfigIssue(path, "'directions' and 'weights' go together"))
        return
    if len(dirs) != len(w):
        issues.append(ConfigIssue(f"{path}.weights", "one weight per direction required"))
    for k, v in enumerate(dirs):
        if d is not None and len(v) != d:
            issues.append(ConfigIssue(f"{path}.directions[{k}]", f"expected {d} components"))
        elif not math.hypot(*v) > 0:
            issues.append(ConfigIssue(f"{path}.directions[{k}]", "zero vector"))


def _check_alpha(alpha, d, path, issues, kind):
    if not 0 < alpha <= 1:
        what = {"branches": "the exponent condition 0 < alpha <= 1 with alpha > 1 - 1/(d-1)",
                "roots": "the exponent condition 0 < alpha <= 1 (alpha > 1 - 1/(d-2) is vacuous in d = 2)",
                "irrigation": "0 < alpha <= 1"}[kind]
        issues.append(ConfigIssue(path, f"alpha = {alpha} violates {what}"))
    elif kind == "branches" and d is not None and d > 2 and not alpha > 1 - 1 / (d - 1):
        issues.append(ConfigIssue(path, f"alpha = {alpha} violates the dimension condition "
                                        f"alpha > 1 - 1/(d-1) = {1 - 1 / (d - 1):g} for d = {d}"))


def _check_reaction(reac, res, path, issues):
    try:
        a = np.asarray(reac["a"], dtype=float)
    except (TypeError, ValueError):
        issues.append(ConfigIssue(f"{path}.a", "must be a number or a rectangular nested list"))
        return
    nodes = tuple(r + 1 for r in res)
    if a.ndim not in (0, 2) or (a.ndim == 2 and a.shape != nodes):
        issues.append(ConfigIssue(f"{path}.a", f"must be a number or a {nodes[0]}x{nodes[1]} node array"))
        return
    if not np.all(np.isfinite(a)) or np.any(a < 0):
        issues.append(ConfigIssue(f"{path}.a", "must be finite and nonnegative"))
    elif np.any(a > reac["b"] * reac["M"]):
        issues.append(ConfigIssue(f"{path}.a", "must satisfy a <= b*M (u = M is then a supersolution)"))


def _semantic(mode: str, prob: dict, solv: dict) -> list[ConfigIssue]:
    issues: list[ConfigIssue] = []
    P = "problem"
    if mode == "irrigate":
        meas = prob["measure"]
        d = meas.get("d", len(meas["atoms"][0]["x"]) if meas["atoms"] else 2)
        _check_measure(meas, d, f"{P}.measure", issues)
        _check_alpha(prob["alpha"], d, f"{P}.alpha", issues, "irrigation")
        if solv["mode"] == "exhaustive" and len(meas["atoms"]) > MAX_EXHAUSTIVE_ATOMS:
            issues.append(ConfigIssue("solver.mode", f"exhaustive search handles at most "
                                                     f"{MAX_EXHAUSTIVE_ATOMS} atoms"))
        return issues
    if mode == "selftest":
        return issues
    two_d = mode in ("harvest", "optimize-roots")
    d = _check_box(prob["domain"], f"{P}.domain", issues, (2,) if two_d else (2, 3))
    _check_resolution(prob["resolution"], d, f"{P}.resolution", issues, 2 if two_d else 1)
    res = prob["resolution"]
    if mode in ("sunlight", "optimize-branches"):
        _check_light(prob["light"], d, f"{P}.light", issues)
        _check_density(prob.get("obstacle"), prob["domain"], res, d, f"{P}.obstacle", issues)
    if mode == "sunlight":
        _check_density(prob["density"], prob["domain"], res, d, f"{P}.density", issues)
        if prob["density"] is None:
            issues.append(ConfigIssue(f"{P}.density", "must not be null"))
    if two_d:
        _check_reaction(prob["reaction"], res, f"{P}.reaction", issues)
    if mode == "harvest":
        _check_density(prob.get("roots"), prob["domain"], res, d, f"{P}.roots", issues)
    if mode.startswith("optimize"):
        kind = "branches" if mode == "optimize-branches" else "roots"
        if d is not None:
            _check_origin(prob["domain"], f"{P}.domain", issues)
            if len(res) == d:
                _check_smear(prob["smear_radius"], prob["domain"], res, f"{P}.smear_radius", issues)
        _check_alpha(prob["alpha"], d, f"{P}.alpha", issues, kind)
        if kind == "branches" and not prob["c"] > 0:
            issues.append(ConfigIssue(f"{P}.c", "must be positive for the branch problem"))
        init = solv.get("initial")
        if init is not None:
            _check_measure(init, d, "solver.initial", issues)
            mass = sum(a["m"] for a in init["atoms"])
            if abs(mass - prob["kappa0"]) > 1e-9:
                issues.append(ConfigIssue("solver.initial", f"total mass {mass} must equal kappa0"))
            if len(init["atoms"]) > solv["max_atoms"]:
                issues.append(ConfigIssue("solver.initial", "more atoms than max_atoms"))
    return issues


def parse_config_data(data: Any, mode: Optional[str] = None) -> ScenarioConfig:
    """Validate a config document (already decoded) and fill defaults.

    ``mode`` supplies the mode when the document omits it; when both are
    given they must agree.
    """
    if not isinstance(data, dict):
        raise ConfigError([ConfigIssue("", "config must be a JSON object")])
    data = copy.deepcopy(data)
    if mode is not None:
        if "mode" in data and data["mode"] != mode:
            raise ConfigError([ConfigIssue("mode", f"config says {data['mode']!r} but the "
                                                   f"command is {mode!r}")])
        data["mode"] = mode
    issues = _schema_issues(_TOP, data, ())
    _fill_defaults(_TOP, data)
    if data.get("mode") not in MODES:
        raise ConfigError(issues)
    # keep going after top-level problems so every error is reported at once
    pschema, sschema = SCHEMAS[data["mode"]]
    for key, schema in (("problem", pschema), ("solver", sschema)):
        if isinstance(data[key], dict):
            issues += _schema_issues(schema, data[key], (key,))
    if issues:
        raise ConfigError(issues)
    _fill_defaults(pschema, data["problem"])
    _fill_defaults(sschema, data["solver"])
    issues = _semantic(data["mode"], data["problem"], data["solver"])
    if issues:
        raise ConfigError(issues)
    return ScenarioConfig(data["mode"], data["seed"], data["output_dir"],
                          data["problem"], data["solver"])


def parse_config(path, mode: Optional[str] = None) -> ScenarioConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError([ConfigIssue("", f"cannot read {path}: {exc.strerror}")]) from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([ConfigIssue("", f"not valid JSON: {exc}")]) from exc
    return parse_config_data(data, mode)

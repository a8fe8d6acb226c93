"""Run configuration: JSON schema, semantic checks and object construction.

All problems are collected before anything runs. Each message carries the
key path and, when the key can be located in the source text, its line.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

from jsonschema import Draft202012Validator

from .errors import ConfigError
from .grid import SpaceTimeGrid
from .impact import (ConstantLambda, GammaMaxImpact, IntensityImpact, LinearImpact, NoImpact,
                     PowerLawLambda, TableLambda)
from .payoffs import Payoff

COMMANDS = ("price", "facelift", "hedge", "converge", "supply-curve")

_pos = {"type": "number", "exclusiveMinimum": 0}
_nonneg = {"type": "number", "minimum": 0}

PAYOFF_SCHEMA = {
    "oneOf": [
        {"type": "object", "additionalProperties": False,
         "required": ["type", "strike"],
         "properties": {"type": {"enum": ["call", "put"]}, "strike": _pos,
                        "quantity": {"type": "number"}}},
        {"type": "object", "additionalProperties": False,
         "required": ["type", "lower", "upper"],
         "properties": {"type": {"const": "call_spread"}, "lower": _pos, "upper": _pos,
                        "quantity": {"type": "number"}}},
        {"type": "object", "additionalProperties": False,
         "required": ["type", "prices", "values"],
         "properties": {"type": {"const": "breakpoints"},
                        "prices": {"type": "array", "items": _nonneg, "minItems": 1},
                        "values": {"type": "array", "items": {"type": "number"}, "minItems": 1},
                        "left_slope": {"type": "number"}, "right_slope": {"type": "number"},
                        "quantity": {"type": "number"}}},
    ]
}

CURVE_SCHEMA = {
    "oneOf": [
        {"type": "object", "additionalProperties": False, "required": ["form", "lambda0"],
         "properties": {"form": {"const": "constant"}, "lambda0": _nonneg}},
        {"type": "object", "additionalProperties": False,
         "required": ["form", "lambda0", "exponent"],
         "properties": {"form": {"const": "power_law"}, "lambda0": _nonneg,
                        "exponent": _pos, "scale": _pos}},
        {"type": "object", "additionalProperties": False, "required": ["form", "points"],
         "properties": {"form": {"const": "table"},
                        "points": {"type": "array", "minItems": 1,
                                   "items": {"type": "array", "minItems": 2, "maxItems": 2,
                                             "prefixItems": [{"type": "number"}, _nonneg]}}}},
    ]
}

IMPACT_SCHEMA = {
    "oneOf": [
        {"type": "object", "additionalProperties": False, "required": ["model"],
         "properties": {"model": {"const": "none"}}},
        {"type": "object", "additionalProperties": False, "required": ["model", "lambda"],
         "properties": {"model": {"const": "linear"}, "lambda": _nonneg}},
        {"type": "object", "additionalProperties": False, "required": ["model", "curve"],
         "properties": {"model": {"const": "intensity"}, "curve": CURVE_SCHEMA}},
        {"type": "object", "additionalProperties": False, "required": ["model", "Lambda"],
         "properties": {"model": {"const": "gamma_max"}, "Lambda": _pos}},
    ]
}

GRID_SCHEMA = {
    "type": "object", "additionalProperties": False, "required": ["s_min", "s_max"],
    "properties": {
        "s_min": _pos, "s_max": _pos,
        "n_space": {"type": "integer", "minimum": 3},
        "n_time": {"type": "integer", "minimum": 1},
        "epsilon": _pos,
        "n_itnl": {"type": "integer", "minimum": 1},
        "nl_tol": _nonneg,
        "linearization": {"enum": ["newton", "picard"]},
        "time_grading": {"type": "number", "minimum": 1},
    },
}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["command"],
    "properties": {
        "command": {"enum": list(COMMANDS)},
        "label": {"type": "string"},
        "payoff": PAYOFF_SCHEMA,
        "impact": IMPACT_SCHEMA,
        "sigma": _nonneg,
        "maturity": _pos,
        "grid": GRID_SCHEMA,
        "facelift_first": {"type": "boolean"},
        "seed": {"type": "integer", "minimum": 0, "maximum": 2 ** 64 - 1},
        "output": {"type": "object", "additionalProperties": False,
                   "properties": {"dir": {"type": "string"},
                                  "format": {"enum": ["csv", "json", "both"]}}},
        "price": {"type": "object", "additionalProperties": False,
                  "properties": {"lambda_scales": {"type": "array", "items": _nonneg}}},
        "facelift": {"type": "object", "additionalProperties": False,
                     "properties": {"Lambda": _pos}},
        "hedge": {"type": "object", "additionalProperties": False, "required": ["s0"],
                  "properties": {"s0": _pos,
                                 "n_paths": {"type": "integer", "minimum": 1},
                                 "steps": {"type": "array", "minItems": 1,
                                           "items": {"type": "integer", "minimum": 1}},
                                 "surface_file": {"type": "string"}}},
        "converge": {"type": "object", "additionalProperties": False, "required": ["gamma_max"],
                     "properties": {"gamma_max": _pos,
                                    "n_list": {"type": "array", "minItems": 1,
                                               "items": {"type": "number", "minimum": 1}},
                                    "tau_frac": {"type": "number", "exclusiveMinimum": 0,
                                                 "exclusiveMaximum": 1}}},
        "supply_curve": {"type": "object", "additionalProperties": False,
                         "required": ["gamma_min", "gamma_max"],
                         "properties": {"gamma_min": {"type": "number"},
                                        "gamma_max": {"type": "number"},
                                        "n_points": {"type": "integer", "minimum": 2}}},
    },
}

# blocks each command needs on top of "command"
REQUIRED = {
    "price": ("payoff", "impact", "sigma", "maturity", "grid"),
    "facelift": ("payoff", "grid"),
    "hedge": ("payoff", "impact", "sigma", "maturity", "grid", "hedge"),
    "converge": ("payoff", "sigma", "maturity", "grid", "converge"),
    "supply-curve": ("impact", "sigma", "supply_curve"),
}


@dataclass
class RunConfig:
    command: str
    raw: dict
    payoff: Payoff | None = None
    impact: object = None
    sigma: float | None = None
    maturity: float | None = None
    grid: SpaceTimeGrid | None = None
    facelift_first: bool = True
    seed: int = 0
    out_dir: str = "out"
    fmt: str = "csv"
    options: dict = field(default_factory=dict)

    def block(self, name) -> dict:
        return dict(self.raw.get(name) or {})


# --------------------------------------------------------------------------- #
# locating keys in the source text
# --------------------------------------------------------------------------- #

_WS = " \t\r\n"


def _line_map(text: str) -> dict:
    """Map key paths (tuples) to 1-based line numbers of their values."""
    out = {}
    dec = json.JSONDecoder()

    def skip(i):
        while i < len(text) and text[i] in _WS:
            i += 1
        return i

    def value(i, path):
        i = skip(i)
        out.setdefault(path, text.count("\n", 0, i) + 1)
        ch = text[i]
        if ch == "{":
            i = skip(i + 1)
            if text[i] == "}":
                return i + 1
            while True:
                key, i = json.decoder.scanstring(text, skip(i) + 1)
                i = skip(i)
                out[path + (key,)] = text.count("\n", 0, i) + 1
                i = value(i + 1, path + (key,))
                i = skip(i)
                if text[i] == ",":
                    i += 1
                    continue
                return i + 1
        if ch == "[":
            i = skip(i + 1)
            if text[i] == "]":
                return i + 1
            k = 0
            while True:
                i = value(i, path + (k,))
                i = skip(i)
                k += 1
                if text[i] == ",":
                    i += 1
                    continue
                return i + 1
        _, end = dec.raw_decode(text, i)
        return end

    try:
        value(0, ())
    except (ValueError, IndexError):
        pass
    return out


def _where(path, lines) -> str:
    path = tuple(path)
    dotted = "/".join(str(p) for p in path) or "<root>"
    while path and path not in lines:
        path = path[:-1]
    line = lines.get(path)
    return f"line {line}: {dotted}" if line else dotted


# --------------------------------------------------------------------------- #
# validation
# --------------------------------------------------------------------------- #

_TAGS = ("type", "model", "form")


def _branch_for(branches, inst):
    """The oneOf branch whose tag (type/model/form) matches the instance, if any."""
    if not isinstance(inst, dict):
        return None
    for br in branches:
        for tag in _TAGS:
            spec = br.get("properties", {}).get(tag)
            if spec is None or tag not in inst:
                continue
            if inst[tag] == spec.get("const") or inst[tag] in spec.get("enum", ()):
                return br
    return None


def _schema_errors(doc, schema=SCHEMA, prefix=()):
    for err in Draft202012Validator(schema).iter_errors(doc):
        path = list(prefix) + list(err.absolute_path)
        if err.validator == "oneOf":
            br = _branch_for(err.validator_value, err.instance)
            if br is not None:
                yield from _schema_errors(err.instance, br, path)
                continue
            inst = err.instance if isinstance(err.instance, dict) else {}
            tags = [f"{t}={inst[t]!r}" for t in _TAGS if t in inst]
            yield path, (f"unknown variant {tags[0]}" if tags
                         else "missing the type/model/form tag")
            continue
        yield path, err.message


def _semantic_errors(doc):
    g = doc.get("grid")
    if isinstance(g, dict):
        lo, hi = g.get("s_min"), g.get("s_max")
        if _num(lo) and _num(hi) and not lo < hi:
            yield ["grid", "s_max"], f"s_max ({hi}) must exceed s_min ({lo})"
    p = doc.get("payoff")
    if isinstance(p, dict):
        if p.get("type") == "call_spread" and _num(p.get("lower")) and _num(p.get("upper")) \
                and not p["lower"] < p["upper"]:
            yield ["payoff", "upper"], "call spread needs lower < upper"
        if p.get("type") == "breakpoints":
            pr, va = p.get("prices"), p.get("values")
            if isinstance(pr, list) and isinstance(va, list):
                if len(pr) != len(va):
                    yield ["payoff", "values"], "values must match prices in length"
                if any(_num(a) and _num(b) and b <= a for a, b in zip(pr, pr[1:])):
                    yield ["payoff", "prices"], "prices must be strictly increasing"
    imp = doc.get("impact")
    if isinstance(imp, dict) and isinstance(imp.get("curve"), dict):
        pts = imp["curve"].get("points")
        if isinstance(pts, list):
            xs = [q[0] for q in pts if isinstance(q, list) and q and _num(q[0])]
            if any(b <= a for a, b in zip(xs, xs[1:])):
                yield ["impact", "curve", "points"], "table intensities must be strictly increasing"
    h = doc.get("hedge")
    if isinstance(h, dict):
        steps = h.get("steps")
        if isinstance(steps, list) and all(isinstance(s, int) for s in steps) and steps:
            if any(b <= a for a, b in zip(steps, steps[1:])):
                yield ["hedge", "steps"], "steps must be strictly increasing"
            elif any(steps[-1] % s for s in steps):
                yield ["hedge", "steps"], "every entry must divide the largest"
        if isinstance(g, dict) and _num(h.get("s0")) and _num(g.get("s_min")) \
                and _num(g.get("s_max")) and not g["s_min"] < h["s0"] < g["s_max"]:
            yield ["hedge", "s0"], "s0 must lie strictly inside [s_min, s_max]"
    sc = doc.get("supply_curve")
    if isinstance(sc, dict) and _num(sc.get("gamma_min")) and _num(sc.get("gamma_max")) \
            and not sc["gamma_min"] < sc["gamma_max"]:
        yield ["supply_curve", "gamma_max"], "gamma_max must exceed gamma_min"
    cmd = doc.get("command")
    if cmd == "facelift":
        bound_from_impact = isinstance(imp, dict) and imp.get("model") in ("linear", "gamma_max")
        if not bound_from_impact and "Lambda" not in (doc.get("facelift") or {}):
            yield ["facelift"], "facelift needs facelift.Lambda or a linear/gamma_max impact block"
    if cmd in REQUIRED:
        for key in REQUIRED[cmd]:
            if key not in doc:
                yield [], f"command {cmd!r} requires the {key!r} block"


def _num(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def validate(text: str) -> RunConfig:
    """Parse and validate a config document; raise ConfigError with every problem."""
    if text is None or not text.strip():
        raise ConfigError(["line 1: <root>: config is empty"])
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([f"line {exc.lineno}: JSON syntax error: {exc.msg} (column {exc.colno})"])
    if not isinstance(doc, dict):
        raise ConfigError(["line 1: <root>: config must be a JSON object"])
    lines = _line_map(text)
    errors = []
    seen = set()
    for path, msg in list(_schema_errors(doc)) + list(_semantic_errors(doc)):
        line = f"{_where(path, lines)}: {msg}"
        if line not in seen:
            seen.add(line)
            errors.append(line)
    if errors:
        raise ConfigError(errors)
    return build(doc)


def load(path) -> RunConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError([f"cannot read config {path}: {exc.strerror}"])
    return validate(text)


# --------------------------------------------------------------------------- #
# construction
# --------------------------------------------------------------------------- #

def build_payoff(d: dict) -> Payoff:
    q = d.get("quantity", 1.0)
    kind = d["type"]
    if kind == "call":
        return Payoff.call(d["strike"], q)
    if kind == "put":
        return Payoff.put(d["strike"], q)
    if kind == "call_spread":
        return Payoff.call_spread(d["lower"], d["upper"], q)
    return Payoff(tuple(d["prices"]), tuple(d["values"]), d.get("left_slope", 0.0),
                  d.get("right_slope", 0.0)).scaled(q)


def build_curve(d: dict):
    form = d["form"]
    if form == "constant":
        return ConstantLambda(d["lambda0"])
    if form == "power_law":
        return PowerLawLambda(d["lambda0"], d["exponent"], d.get("scale", 1.0))
    return TableLambda.from_pairs(d["points"])


def build_impact(d: dict):
    model = d["model"]
    if model == "none":
        return NoImpact()
    if model == "linear":
        return LinearImpact(d["lambda"])
    if model == "intensity":
        return IntensityImpact(build_curve(d["curve"]))
    return GammaMaxImpact(d["Lambda"])


def build_grid(d: dict) -> SpaceTimeGrid:
    return SpaceTimeGrid(**d)


def build(doc: dict) -> RunConfig:
    out = doc.get("output") or {}
    cfg = RunConfig(command=doc["command"], raw=doc,
                    seed=int(doc.get("seed", 0)),
                    facelift_first=bool(doc.get("facelift_first", True)),
                    out_dir=out.get("dir", "out"), fmt=out.get("format", "csv"))
    try:
        if "payoff" in doc:
            cfg.payoff = build_payoff(doc["payoff"])
        if "impact" in doc:
            cfg.impact = build_impact(doc["impact"])
        if "grid" in doc:
            cfg.grid = build_grid(doc["grid"])
    except ValueError as exc:
        raise ConfigError([f"<root>: {exc}"])
    if "sigma" in doc:
        cfg.sigma = float(doc["sigma"])
    if "maturity" in doc:
        cfg.maturity = float(doc["maturity"])
    return cfg

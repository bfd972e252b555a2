"""JSON model documents: schema, overrides and conversion to model objects."""

from __future__ import annotations

import copy
import json

import jsonschema
import numpy as np

from .levy_model import AuxiliaryProblem, Family, JumpLaw, LevyModel, RegimeModel
from .payoff import PayoffFunction

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_NONNEG = {"type": "number", "minimum": 0}

LEVY_SCHEMA = {
    "oneOf": [
        {
            "type": "object",
            "properties": {"family": {"const": Family.BROWNIAN.value}, "gamma": _NUM, "sigma": _POS},
            "required": ["family", "gamma", "sigma"],
            "additionalProperties": False,
        },
        {
            "type": "object",
            "properties": {
                "family": {"const": Family.CRAMER_LUNDBERG.value},
                "c": _NUM,
                "gamma": _NUM,
                "sigma": _NONNEG,
                "lambda": _NONNEG,
                "mu": _POS,
            },
            "required": ["family", "lambda", "mu"],
            "oneOf": [{"required": ["c"]}, {"required": ["gamma"]}],
            "additionalProperties": False,
        },
    ]
}

PAYOFF_SCHEMA = {
    "type": "object",
    "properties": {
        "knots": {"type": "array", "items": _NUM, "minItems": 1},
        "values": {"type": "array", "items": _NUM, "minItems": 1},
        "tail_slope": _NUM,
    },
    "required": ["knots", "values"],
    "additionalProperties": False,
}

JUMP_SCHEMA = {
    "type": "object",
    "properties": {
        "from": {"type": ["integer", "string"]},
        "to": {"type": ["integer", "string"]},
        "law": {"enum": ["zero", "point", "exponential"]},
        "m": _NONNEG,
        "eta": _POS,
    },
    "required": ["from", "to", "law"],
    "allOf": [
        {"if": {"properties": {"law": {"const": "point"}}}, "then": {"required": ["m"]}},
        {"if": {"properties": {"law": {"const": "exponential"}}}, "then": {"required": ["eta"]}},
    ],
    "additionalProperties": False,
}

RUN_SCHEMA = {
    "type": "object",
    "properties": {
        "tol": _POS,
        "max_iter": {"type": "integer", "minimum": 1},
        "grid_points": {"type": "integer", "minimum": 3},
        "x_max": _POS,
        "paths": {"type": "integer", "minimum": 2},
        "seed": {"type": "integer", "minimum": 0},
        "dt": _POS,
        "horizon": _POS,
        "antithetic": {"type": "boolean"},
        "b": {"oneOf": [_NONNEG, {"type": "array", "items": _NONNEG}]},
        "x": _NUM,
        "state": {"type": ["integer", "string"]},
    },
    "additionalProperties": False,
}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "properties": {
        "auxiliary": {
            "type": "object",
            "properties": {
                "levy": LEVY_SCHEMA,
                "delta": _POS,
                "beta": _NUM,
                "q": _POS,
                "r": _NONNEG,
                "payoff": PAYOFF_SCHEMA,
            },
            "required": ["levy", "delta", "beta", "q", "r"],
            "additionalProperties": False,
        },
        "regime": {
            "type": "object",
            "properties": {
                "beta": _NUM,
                "states": {
                    "type": "array",
                    "minItems": 1,
                    "items": {
                        "type": "object",
                        "properties": {"name": {"type": "string"}, "levy": LEVY_SCHEMA, "delta": _NONNEG, "r": _NUM},
                        "required": ["levy", "delta", "r"],
                        "additionalProperties": False,
                    },
                },
                "Q": {"type": "array", "items": {"type": "array", "items": _NUM}},
                "jumps": {"type": "array", "items": JUMP_SCHEMA},
            },
            "required": ["beta", "states", "Q"],
            "additionalProperties": False,
        },
        "run": RUN_SCHEMA,
    },
    "oneOf": [{"required": ["auxiliary"]}, {"required": ["regime"]}],
    "additionalProperties": False,
}


class SchemaError(ValueError):
    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = path
        self.message = message


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(doc, overrides):
    """Apply ``key.sub=value`` overrides; list items are addressed by index."""
    doc = copy.deepcopy(doc)
    for item in overrides or []:
        if "=" not in item:
            raise SchemaError(item, "override must look like key=value")
        key, value = item.split("=", 1)
        parts = key.split(".")
        node = doc
        for part in parts[:-1]:
            idx = int(part) if isinstance(node, list) else part
            if isinstance(node, dict) and idx not in node:
                node[idx] = {}
            node = node[idx]
        last = int(parts[-1]) if isinstance(node, list) else parts[-1]
        node[last] = _parse_value(value)
    return doc


def check_schema(doc):
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        # prefer the deepest error: it names the offending field
        err = max(errors, key=lambda e: len(e.absolute_path))
        path = "/".join(str(p) for p in err.absolute_path) or "<root>"
        raise SchemaError(path, err.message)


def load(path, overrides=None):
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError("<root>", f"invalid JSON: {exc}") from exc
    doc = apply_overrides(doc, overrides)
    check_schema(doc)
    return doc


def levy_from_dict(d) -> LevyModel:
    if d["family"] == Family.BROWNIAN.value:
        return LevyModel.brownian(d["gamma"], d["sigma"])
    if "c" in d:
        return LevyModel.cramer_lundberg(d["c"], d["lambda"], d["mu"], d.get("sigma", 0.0))
    return LevyModel(Family.CRAMER_LUNDBERG, d["gamma"], d.get("sigma", 0.0), d["lambda"], d["mu"])


def payoff_from_dict(d) -> PayoffFunction:
    if d is None:
        return PayoffFunction.zero()
    return PayoffFunction(np.array(d["knots"], dtype=float), np.array(d["values"], dtype=float), d.get("tail_slope", 0.0))


def auxiliary_from_dict(d) -> AuxiliaryProblem:
    return AuxiliaryProblem(levy_from_dict(d["levy"]), d["delta"], d["beta"], d["q"], d["r"], payoff_from_dict(d.get("payoff")))


def state_index(names, key, where="state"):
    """Position of a state given by index or by name."""
    if isinstance(key, int):
        if not 0 <= key < len(names):
            raise SchemaError(where, f"index {key} out of range")
        return key
    if key not in names:
        raise SchemaError(where, f"unknown state {key!r}")
    return list(names).index(key)


def regime_from_dict(d) -> RegimeModel:
    states = d["states"]
    n = len(states)
    Q = np.array(d["Q"], dtype=float)
    if Q.shape != (n, n):
        raise SchemaError("regime/Q", f"expected a {n}x{n} matrix")
    names = tuple(s.get("name", str(k + 1)) for k, s in enumerate(states))
    jumps = {}
    for k, j in enumerate(d.get("jumps", [])):
        where = f"regime/jumps/{k}"
        key = (state_index(names, j["from"], where), state_index(names, j["to"], where))
        jumps[key] = JumpLaw(j["law"], size=j.get("m", 0.0), rate=j.get("eta", 1.0))
    return RegimeModel(
        Q=Q,
        levy=[levy_from_dict(s["levy"]) for s in states],
        delta=[s["delta"] for s in states],
        discount=[s["r"] for s in states],
        beta=d["beta"],
        jumps=jumps,
        states=names,
    )

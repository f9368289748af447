"""Run configuration: JSON schema, defaults and graph construction."""

from __future__ import annotations

import copy
import json
from pathlib import Path

import jsonschema

from .graph import (GRAPH_SCHEMA, GraphError, MetricGraph, defect_spec_from_dict, gen_grid_window, gen_star,
                    gen_zperiodic_window, ladder_cell, line_cell, load_graph, with_defect_spec)

COMMANDS = ("solve", "sweep", "threshold", "qscan", "spectrum", "construct", "verify")
FAMILIES = ("star_exp", "star_exponential", "star_soliton", "tent", "zper_exp", "grid_exp", "grid_log",
            "appendix_loglinear", "appendix_plateau")

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_point = {"type": "array", "items": {"type": "integer"}, "minItems": 2, "maxItems": 2}


def _scalar_or_grid(item):
    return {"oneOf": [item, {"type": "array", "items": item, "minItems": 1}]}


SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "qgdefect run configuration",
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "command": {"enum": list(COMMANDS)},
        "graph": {
            "oneOf": [
                {"type": "object", "additionalProperties": False, "required": ["generator", "N", "L"],
                 "properties": {"generator": {"const": "star"}, "N": {"type": "integer", "minimum": 1},
                                "L": _pos}},
                {"type": "object", "additionalProperties": False, "required": ["generator", "n"],
                 "properties": {"generator": {"const": "grid"}, "n": {"type": "integer", "minimum": 1},
                                "center": _point}},
                {"type": "object", "additionalProperties": False, "required": ["generator", "cell", "n"],
                 "properties": {"generator": {"const": "zperiodic"}, "cell": {"enum": ["ladder", "line"]},
                                "n": {"type": "integer", "minimum": 0}, "rail": _pos, "rung": _pos,
                                "length": _pos}},
                {"type": "object", "additionalProperties": False, "required": ["file"],
                 "properties": {"file": {"type": "string"}}},
            ]
        },
        "defects": {
            "oneOf": [
                {"type": "object", "additionalProperties": False, "required": ["kind"],
                 "properties": {"kind": {"enum": ["center", "none", "file"]}}},
                {"$ref": "#/$defs/defects"},
            ]
        },
        "mesh": {"type": "object", "additionalProperties": False,
                 "properties": {"h": _pos, "truncation": {"enum": ["dirichlet", "natural"]},
                                "lumped": {"type": "boolean"}}},
        "q": _scalar_or_grid({"type": "number", "exclusiveMinimum": 2, "exclusiveMaximum": 4}),
        "mu": _scalar_or_grid(_pos),
        "solver": {"type": "object", "additionalProperties": False,
                   "properties": {"max_iter": {"type": "integer", "minimum": 1}, "tol": _pos,
                                  "n_random": {"type": "integer", "minimum": 0},
                                  "widths": {"type": "array", "items": _pos},
                                  "metric": {"enum": ["h1", "l2"]}, "polish": {"type": "boolean"}}},
        "threshold": {"type": "object", "additionalProperties": False,
                      "properties": {"bracket": {"type": "array", "items": _pos, "minItems": 2, "maxItems": 2},
                                     "rel_tol": _pos, "families": {"type": "boolean"},
                                     "mu_min": _pos, "mu_max": _pos}},
        "spectrum": {"type": "object", "additionalProperties": False,
                     "properties": {"alpha": _scalar_or_grid({"type": "number", "minimum": 0}),
                                    "vertex": {}, "tol": _pos}},
        "construct": {"type": "object", "additionalProperties": False, "required": ["family"],
                      "properties": {"family": {"enum": list(FAMILIES)}, "params": {"type": "object"},
                                     "sweep": {"type": "object", "additionalProperties": False,
                                               "required": ["name", "values"],
                                               "properties": {"name": {"type": "string"},
                                                              "values": {"type": "array", "items": _num,
                                                                         "minItems": 1}}},
                                     "attach": {"type": "boolean"}}},
        "verify": {"type": "object", "additionalProperties": False,
                   "properties": {"groups": {"type": "array", "items": {"type": "string"}}}},
        "output": {"type": "object", "additionalProperties": False,
                   "properties": {"name": {"type": "string", "pattern": "^[A-Za-z0-9_.-]+$"},
                                  "profile": {"type": "boolean"}}},
    },
    "required": ["command"],
    "$defs": GRAPH_SCHEMA["$defs"],
    "allOf": [
        {"if": {"properties": {"command": {"enum": ["solve", "sweep"]}}},
         "then": {"required": ["graph", "defects", "q", "mu"]}},
        {"if": {"properties": {"command": {"enum": ["threshold", "qscan"]}}},
         "then": {"required": ["graph", "defects", "q"]}},
        {"if": {"properties": {"command": {"const": "spectrum"}}}, "then": {"required": ["graph"]}},
        {"if": {"properties": {"command": {"const": "construct"}}}, "then": {"required": ["construct"]}},
    ],
}

DEFAULTS = {
    "mesh": {"h": 0.1, "truncation": "dirichlet", "lumped": False},
    "solver": {"max_iter": 4000, "tol": 1e-9, "n_random": 1, "widths": [0.5, 2.0, 8.0], "metric": "h1",
               "polish": True},
    "threshold": {"bracket": [1.0, 100.0], "rel_tol": 0.01, "families": True, "mu_min": 1e-4, "mu_max": 1e6},
    "spectrum": {"alpha": 1.0, "vertex": None, "tol": 1e-10},
    "verify": {"groups": []},
    "output": {"profile": False},
}


class ConfigError(ValueError):
    """Invalid configuration; ``path`` locates the offending entry."""

    def __init__(self, message, path=()):
        super().__init__(message)
        self.path = list(path)


def validate(cfg: dict) -> None:
    try:
        jsonschema.validate(cfg, SCHEMA)
    except jsonschema.ValidationError as exc:
        raise ConfigError(exc.message, exc.absolute_path) from None
    if "defects" in cfg:
        kind = cfg["defects"]["kind"]
        if kind not in ("center", "none", "file"):
            try:
                defect_spec_from_dict(cfg["defects"])
            except (KeyError, TypeError, ValueError) as exc:
                raise ConfigError(f"bad defect spec: {exc}", ["defects"]) from None


def resolve(cfg: dict, command: str) -> dict:
    """Validated copy of ``cfg`` with the command set and every default filled in."""
    out = copy.deepcopy(cfg)
    if out.get("command", command) != command:
        raise ConfigError(f"config is for '{out['command']}', not '{command}'", ["command"])
    out["command"] = command
    validate(out)
    for key, d in DEFAULTS.items():
        merged = copy.deepcopy(d)
        merged.update(out.get(key, {}))
        out[key] = merged
    out["output"].setdefault("name", command)
    return out


def load(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    return doc


def build_graph(cfg: dict) -> tuple[MetricGraph, object]:
    """Graph with resolved defects and the defect spec object (or None)."""
    gc, dc = cfg["graph"], cfg.get("defects", {"kind": "center"})
    kind = dc["kind"]
    try:
        if "file" in gc:
            g = load_graph(gc["file"], require_defects=kind == "file")
            if kind == "file":
                return g, None
            g = g.with_defects([])
        elif gc["generator"] == "star":
            g = gen_star(gc["N"], gc["L"], center_is_defect=False)
        elif gc["generator"] == "grid":
            g = gen_grid_window(gc["n"], tuple(gc.get("center", (0, 0))))
        else:
            cell = ladder_cell(gc.get("rail", 1.0), gc.get("rung", 1.0)) if gc["cell"] == "ladder" \
                else line_cell(gc.get("length", 1.0))
            g = gen_zperiodic_window(cell, gc["n"])
        if kind == "none":
            return g, None
        if kind == "file":
            raise ConfigError("defects of kind 'file' need a graph file", ["defects"])
        if kind == "center":
            return g.with_defects([_center(g)]), None
        spec = defect_spec_from_dict(dc)
        return with_defect_spec(g, spec), spec
    except GraphError as exc:
        raise ConfigError(str(exc), ["graph"]) from None


def _center(g: MetricGraph) -> int:
    if g.kind == "star":
        return 0
    if g.kind == "grid":
        return g.index(tuple(g.truncation["center"]))
    if g.kind == "zperiodic":
        cell = g.truncation["cell"]
        return g.index((cell["R"][0], 0))
    raise ConfigError("defects of kind 'center' need a generated graph", ["defects"])

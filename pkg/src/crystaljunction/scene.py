"""Scene files: JSON description of two media, a junction, a grid and run
parameters.  Parsing validates against a closed schema, fills defaults and
produces a canonical echo that re-parses to itself byte for byte."""

from __future__ import annotations

import copy
import dataclasses
import json
from typing import Any

import jsonschema

from .errors import SchemaError
from .media import ConstitutiveProfile, JunctionSystem, Layer, Medium

SCHEMA_VERSION = "crystaljunction.scene/1"

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_CPLX = {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2}
_WINDOW = {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2}

_LAYER = {
    "type": "object",
    "additionalProperties": False,
    "required": ["d"],
    "properties": {"d": _POS, "eps": _NUM, "mu": _NUM, "chi": _CPLX},
}

_MEDIUM = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string"},
        "layers": {"type": "array", "items": _LAYER, "minItems": 1},
        "homogeneous": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"eps": _NUM, "mu": _NUM, "chi": _CPLX, "period": _POS},
        },
        "fourier": {
            "type": "object",
            "additionalProperties": False,
            "required": ["period", "eps", "mu"],
            "properties": {
                "period": _POS,
                "eps": {"type": "array", "items": _CPLX, "minItems": 1},
                "mu": {"type": "array", "items": _CPLX, "minItems": 1},
                "chi": {"type": "array", "items": _CPLX, "minItems": 1},
            },
        },
    },
    "oneOf": [{"required": ["layers"]}, {"required": ["homogeneous"]}, {"required": ["fourier"]}],
}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "required": ["media"],
    "properties": {
        "schema": {"const": SCHEMA_VERSION},
        "media": {
            "type": "object",
            "additionalProperties": False,
            "required": ["left", "right"],
            "properties": {"left": _MEDIUM, "right": _MEDIUM},
        },
        "junction": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "mode": {"enum": ["compact", "algebraic"]},
                "halfwidth": {"type": "number", "minimum": 0},
                "epsilon": _POS,
            },
        },
        "grid": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "cells": {"type": "integer", "minimum": 1},
                "points_per_cell": {"type": "integer", "minimum": 2},
            },
        },
        "run": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "N": {"type": "integer", "minimum": 1},
                "kpoints": {"type": "integer", "minimum": 2},
                "n_bands": {"type": "integer", "minimum": 1},
                "window": {"anyOf": [_WINDOW, {"type": "null"}]},
                "side": {"enum": ["left", "right"]},
                "band": {"anyOf": [{"type": "integer", "minimum": 0}, {"type": "null"}]},
                "k0": {"anyOf": [_NUM, {"type": "null"}]},
                "sign": {"enum": ["plus", "minus"]},
                "sigma_k": {"anyOf": [_POS, {"type": "null"}]},
                "energy": {"anyOf": [_NUM, {"type": "null"}]},
                "direction": {"enum": ["plus", "minus"]},
                "dt": {"anyOf": [_POS, {"const": "auto"}]},
                "schedule": {"anyOf": [{"type": "array", "items": _POS, "minItems": 1}, {"const": "auto"}]},
                "t_final": {"anyOf": [_POS, {"type": "null"}]},
                "snapshot_every": {"type": "integer", "minimum": 0},
                "tol": _POS,
                "alarm": _POS,
                "rhos": {"type": "array", "items": _POS, "minItems": 2},
                "threshold_tol": _POS,
                "seed": {"type": "integer", "minimum": 0},
                "threads": {"type": "integer", "minimum": 1},
            },
        },
    },
}

DEFAULTS = {
    "junction": {"mode": "compact", "halfwidth": 1.0, "epsilon": 1.0},
    "grid": {"cells": 256, "points_per_cell": 16},
    "run": {
        "N": 64, "kpoints": 201, "n_bands": 8, "window": None, "side": "left", "band": None, "k0": None,
        "sign": "plus", "sigma_k": None, "energy": None, "direction": "plus", "dt": "auto", "schedule": "auto",
        "t_final": None, "snapshot_every": 0, "tol": 1e-12, "alarm": 1e-4,
        "rhos": [10.0, 31.622776601683793, 100.0, 316.22776601683796, 1000.0],
        "threshold_tol": 1e-9, "seed": 0, "threads": 1,
    },
}

_LAYER_DEFAULTS = {"eps": 1.0, "mu": 1.0, "chi": [0.0, 0.0]}
_HOMOGENEOUS_DEFAULTS = {"eps": 1.0, "mu": 1.0, "chi": [0.0, 0.0], "period": 1.0}


@dataclasses.dataclass(frozen=True)
class SceneConfig:
    data: dict
    version: str = SCHEMA_VERSION

    @property
    def run(self) -> dict:
        return self.data["run"]

    def echo(self) -> str:
        return dump_config(self.data)

    def with_overrides(self, **run) -> "SceneConfig":
        data = copy.deepcopy(self.data)
        for key, val in run.items():
            if val is not None:
                data["run"][key] = val
        validate(data)
        return SceneConfig(data)

    def medium(self, side: str) -> Medium:
        return build_medium(self.data["media"][side], f"/media/{side}")

    def junction(self) -> JunctionSystem:
        j = self.data["junction"]
        return JunctionSystem(self.medium("left"), self.medium("right"), j["mode"], float(j["halfwidth"]),
                              float(j["epsilon"]))


def _pointer(path) -> str:
    return "/" + "/".join(str(p) for p in path) if path else ""


def validate(data: Any) -> None:
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(data), key=lambda e: (len(e.absolute_path), list(map(str, e.absolute_path))))
    if errors:
        err = errors[0]
        raise SchemaError(err.message, _pointer(err.absolute_path))
    for side in ("left", "right"):
        med = data["media"][side]
        for i, layer in enumerate(med.get("layers", [])):
            _check_material(layer, f"/media/{side}/layers/{i}", f"layer {i} of the {side} medium")
        if "homogeneous" in med:
            _check_material(med["homogeneous"], f"/media/{side}/homogeneous", f"the {side} medium")
    run = data.get("run", {})
    w = run.get("window")
    if w is not None and not w[0] < w[1]:
        raise SchemaError("lower bound must be below upper bound", "/run/window")


def _check_material(entry: dict, pointer: str, what: str) -> None:
    eps = entry.get("eps", 1.0)
    mu = entry.get("mu", 1.0)
    chi = entry.get("chi", [0.0, 0.0])
    det = eps * mu - (chi[0] ** 2 + chi[1] ** 2)
    if eps <= 0 or mu <= 0 or det <= 0:
        raise SchemaError(f"{what} is not positive definite (eps*mu - |chi|^2 = {det:g})", pointer)


def fill_defaults(data: dict) -> dict:
    out = copy.deepcopy(data)
    out["schema"] = SCHEMA_VERSION
    for section, defaults in DEFAULTS.items():
        merged = copy.deepcopy(defaults)
        merged.update(out.get(section, {}))
        out[section] = merged
    for side in ("left", "right"):
        med = out["media"][side]
        if "layers" in med:
            med["layers"] = [dict(_LAYER_DEFAULTS, **layer) for layer in med["layers"]]
        if "homogeneous" in med:
            med["homogeneous"] = dict(_HOMOGENEOUS_DEFAULTS, **med["homogeneous"])
        if "fourier" in med and "chi" not in med["fourier"]:
            med["fourier"]["chi"] = [[0.0, 0.0]] * len(med["fourier"]["eps"])
        med.setdefault("name", side)
    return out


def dump_config(data: dict) -> str:
    return json.dumps(data, indent=2, sort_keys=True) + "\n"


def load_config(data: dict) -> SceneConfig:
    validate(data)
    full = fill_defaults(data)
    validate(full)
    return SceneConfig(full)


def parse_scene(path) -> SceneConfig:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"invalid JSON: {exc}", "") from exc
    return load_config(data)


def build_medium(entry: dict, pointer: str = "") -> Medium:
    name = entry.get("name", "")
    try:
        if "layers" in entry:
            layers = [Layer(l["d"], l["eps"], l["mu"], complex(*l["chi"])) for l in entry["layers"]]
            return Medium(ConstitutiveProfile.from_layers(layers), name)
        if "homogeneous" in entry:
            h = entry["homogeneous"]
            return Medium.homogeneous(h["eps"], h["mu"], complex(*h["chi"]), h["period"], name)
        f = entry["fourier"]
        return Medium(ConstitutiveProfile.from_fourier(
            f["period"], [complex(*c) for c in f["eps"]], [complex(*c) for c in f["mu"]],
            [complex(*c) for c in f["chi"]]), name)
    except ValueError as exc:
        raise SchemaError(str(exc), pointer) from exc

"""Run configuration file: schema, defaults and conversion to calibration configs."""
from __future__ import annotations

import copy
import json
from pathlib import Path

import jsonschema

from .history import HmConfig
from .link import LinkConfig, PhysicalParams
from .pipeline import CalibrationConfig, Seeds
from .space import ParameterSpace


class ConfigError(ValueError):
    pass


_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_int = {"type": "integer"}
_bound = {
    "type": "object",
    "properties": {"lower": _num, "upper": _num, "unit": {"type": "string"}},
    "required": ["lower", "upper"],
    "additionalProperties": False,
}
_pair = {"type": "array", "items": _pos, "minItems": 2, "maxItems": 2}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "space": {"type": "object", "minProperties": 1, "additionalProperties": _bound},
        "link": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_spans": {"type": "integer", "minimum": 1},
                "span_length": _pos,
                "amp_gain": _pos,
                "bandwidth": _pos,
                "center_frequency": _pos,
                "beta2_abs": _pos,
                "planck": _pos,
            },
        },
        "ground_truth": {
            "oneOf": [
                {"type": "null"},
                {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {k: _pos for k in ("alpha", "gamma", "nf", "snr0")},
                    "required": ["alpha", "gamma", "nf", "snr0"],
                },
            ]
        },
        "observed": {
            "type": "array",
            "minItems": 1,
            "items": {"type": "array", "items": _num, "minItems": 2, "maxItems": 2},
        },
        "penalties": {"type": "array", "items": {"type": "number", "minimum": 0}},
        "gp": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_sam": {"type": "integer", "minimum": 2},
                "n_val": {"type": "integer", "minimum": 1},
                "restarts": {"type": "integer", "minimum": 1},
                "lengthscale_bounds": _pair,
                "nugget_bounds": _pair,
                "validation_gate_db": _pos,
            },
        },
        "hm": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_sigma": _pos,
                "n_hm": {"type": "integer", "minimum": 1},
                "sampling_mode": {"enum": ["shared", "independent"]},
                "batch_size": {"type": "integer", "minimum": 1},
                "memory_budget_mb": _pos,
            },
        },
        "seeds": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"design": _int, "training": _int, "hm": _int},
        },
        "output_dir": {"type": "string", "minLength": 1},
    },
}

DEFAULTS = {
    "space": ParameterSpace.default().to_dict(),
    "link": LinkConfig().to_dict(),
    "ground_truth": PhysicalParams.ground_truth().to_dict(),
    "penalties": [0.25, 0.5, 1, 2, 3],
    "gp": {"n_sam": 200, "n_val": 20, "restarts": 5, "lengthscale_bounds": [0.01, 100.0],
           "nugget_bounds": [1e-8, 1.0], "validation_gate_db": 0.05},
    "hm": {"n_sigma": 3, "n_hm": 2_000_000, "sampling_mode": "shared", "batch_size": 20_000,
           "memory_budget_mb": 1024},
    "seeds": {"design": 1, "training": 2, "hm": 3},
    "output_dir": "out",
}


def validate_document(doc: dict) -> None:
    errors = sorted(jsonschema.Draft7Validator(SCHEMA).iter_errors(doc), key=lambda e: list(e.path))
    if errors:
        lines = [f"{'/'.join(map(str, e.path)) or '<root>'}: {e.message}" for e in errors]
        raise ConfigError("invalid configuration:\n  " + "\n  ".join(lines))


def resolve(doc: dict) -> dict:
    """Schema-check ``doc`` and fill in defaults section by section."""
    validate_document(doc)
    out = copy.deepcopy(DEFAULTS)
    for key, value in doc.items():
        if isinstance(value, dict) and key in ("link", "gp", "hm", "seeds"):
            out[key].update(value)
        else:
            out[key] = copy.deepcopy(value)
    if "observed" in doc and "ground_truth" not in doc:
        out["ground_truth"] = None
    return out


def load(path) -> dict:
    """Read and resolve a config file. Raises OSError / ConfigError."""
    path = Path(path)
    text = path.read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return resolve(doc)


def space_of(cfg: dict) -> ParameterSpace:
    try:
        return ParameterSpace.from_dict(cfg["space"])
    except ValueError as exc:
        raise ConfigError(f"space: {exc}") from exc


def link_of(cfg: dict) -> LinkConfig:
    try:
        return LinkConfig.from_dict(cfg["link"])
    except ValueError as exc:
        raise ConfigError(f"link: {exc}") from exc


def ground_truth_of(cfg: dict) -> PhysicalParams | None:
    if cfg["ground_truth"] is None:
        return None
    return PhysicalParams.from_dict(cfg["ground_truth"])


def calibration_config(cfg: dict, penalty_db: float, hm_seed: int | None = None) -> CalibrationConfig:
    gp, hm, seeds = cfg["gp"], cfg["hm"], dict(cfg["seeds"])
    if hm_seed is not None:
        seeds["hm"] = hm_seed
    observed = cfg.get("observed")
    try:
        return CalibrationConfig(
            space=space_of(cfg),
            link=link_of(cfg),
            ground_truth=ground_truth_of(cfg),
            observed=None if observed is None else tuple((float(p), float(s)) for p, s in observed),
            penalty_db=float(penalty_db),
            n_sam=gp["n_sam"],
            n_val=gp["n_val"],
            hm=HmConfig(n_sigma=float(hm["n_sigma"]), n_hm=hm["n_hm"], sampling_mode=hm["sampling_mode"],
                        seed=seeds["hm"], batch_size=hm["batch_size"],
                        memory_budget_mb=float(hm["memory_budget_mb"])),
            restarts=gp["restarts"],
            seeds=Seeds(**seeds),
            validation_gate_db=float(gp["validation_gate_db"]),
            lengthscale_bounds=tuple(gp["lengthscale_bounds"]),
            nugget_bounds=tuple(gp["nugget_bounds"]),
        )
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

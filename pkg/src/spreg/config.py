"""JSON configuration files mirroring ControllerConfig field names.

Every section may carry a ``doc`` object describing its fields; loaders
ignore it. The ``patterns`` entry may be null (packaged defaults), a path
to a pattern file (resolved against the config file's directory), or an
inline pattern object.
"""

from __future__ import annotations

import json
from pathlib import Path

from .controller import ControllerConfig
from .detector import DetectorConfig
from .errors import ConfigError
from .plan_tracker import GuidanceTable, PatternSet, StepType
from .repair import RepairParams

__all__ = ["config_from_dict", "load_config", "load_config_dict", "config_to_dict"]


def _section(d: dict, name: str) -> dict:
    body = d.get(name) or {}
    if not isinstance(body, dict):
        raise ConfigError(f"config section {name!r} must be an object")
    return {k: v for k, v in body.items() if k != "doc"}


def _step_map(raw: dict, name: str) -> dict[StepType, float]:
    out: dict[StepType, float] = {}
    for key, value in raw.items():
        if key == "doc":
            continue
        try:
            out[StepType(key)] = float(value)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"bad {name} entry {key!r}: {exc}") from exc
    return out


def config_from_dict(d: dict, vocab_size: int | None = None) -> ControllerConfig:
    d = {k: v for k, v in d.items() if k != "doc"}
    known = {"vocab_size", "detector_preset", "detector", "repair", "guidance", "patterns"}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    if vocab_size is not None:
        d["vocab_size"] = vocab_size
    if "vocab_size" not in d:
        raise ConfigError("config requires vocab_size")

    preset = d.get("detector_preset", "default")
    try:
        detector = DetectorConfig.from_preset(preset, **_section(d, "detector"))
        repair = RepairParams(**_section(d, "repair"))
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc

    guidance_raw = _section(d, "guidance")
    table_kwargs = {}
    if "lambda_base" in guidance_raw:
        base = GuidanceTable()
        table_kwargs["lambda_base"] = {
            **base.lambda_base,
            **_step_map(guidance_raw["lambda_base"], "lambda_base"),
        }
    if "gamma" in guidance_raw:
        base = GuidanceTable()
        table_kwargs["gamma"] = {**base.gamma, **_step_map(guidance_raw["gamma"], "gamma")}
    extra = set(guidance_raw) - {"lambda_base", "gamma"}
    if extra:
        raise ConfigError(f"unknown guidance keys: {', '.join(sorted(extra))}")
    guidance = GuidanceTable(**table_kwargs)

    patterns_spec = d.get("patterns")
    if patterns_spec is None:
        patterns = None
    elif isinstance(patterns_spec, str):
        patterns = PatternSet.from_file(patterns_spec)
    elif isinstance(patterns_spec, dict):
        patterns = PatternSet(patterns_spec)
    else:
        raise ConfigError("patterns must be null, a path, or an inline object")

    try:
        size = int(d["vocab_size"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad vocab_size: {exc}") from exc
    return ControllerConfig(
        vocab_size=size, detector=detector, repair=repair, guidance=guidance, patterns=patterns
    )


def load_config_dict(path: str | Path) -> dict:
    """Read a config file to a dict, resolving a relative patterns path."""
    path = Path(path)
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot load config {path}: {exc}") from exc
    if not isinstance(payload, dict):
        raise ConfigError(f"config {path} must be a JSON object")
    patterns = payload.get("patterns")
    if isinstance(patterns, str):
        payload["patterns"] = str((path.parent / patterns).resolve())
    return payload


def load_config(path: str | Path, vocab_size: int | None = None) -> ControllerConfig:
    return config_from_dict(load_config_dict(path), vocab_size=vocab_size)


def config_to_dict(config: ControllerConfig) -> dict:
    det, rep = config.detector, config.repair
    return {
        "vocab_size": config.vocab_size,
        "detector": {f: getattr(det, f) for f in det.__dataclass_fields__},
        "repair": {f: getattr(rep, f) for f in rep.__dataclass_fields__},
        "guidance": {
            "lambda_base": {s.value: v for s, v in config.guidance.lambda_base.items()},
            "gamma": {s.value: v for s, v in config.guidance.gamma.items()},
        },
        "patterns": None,
    }

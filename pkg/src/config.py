"""
Scenario files.

A scenario is a JSON document; see docs/config.md for every key and its
default. Unknown keys are rejected at any depth, with the dotted key path and
the line it was found on.
"""

import copy
import json
import logging
import re
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

from dba_standard import DbaConfig
from fast_intercept import InterceptPolicy
from latency_model import DEFAULT_PRESET, Mode, preset
from models import AllocIdSpec, ConfigError, InvariantViolation, OnuSpec, TcontClass
from sim_engine import Scenario, TrafficStream

__all__ = [
    "ConfigError",
    "build_scenario",
    "load_document",
    "load_scenario",
    "load_sweep",
]

logger = logging.getLogger(__name__)

# None marks a free-form mapping (checked by the consumer)
SCHEMA: Dict[str, Any] = {
    "name": str,
    "seed": int,
    "duration_frames": int,
    "mode": str,
    "preset": str,
    "params": None,
    "pin_variance": bool,
    "queue_depth_bytes": (int, type(None)),
    "drain_frames": int,
    "max_packets": (int, type(None)),
    "capture_frames": int,
    "dba": {
        "frame_capacity_bytes": int,
        "reserved_fraction": (int, float),
        "service_interval_frames": int,
        "weights": {cls.value: (int, float) for cls in TcontClass},
        "strict_priority": bool,
        "quantum_bytes": int,
    },
    "policy": {
        "spare_fill_enabled": bool,
        "preempt_enabled": bool,
        "max_preempt_fraction": (int, float),
        "store_capacity": int,
    },
    "onus": [
        {
            "onu_id": int,
            "fiber_one_way_us": (int, float, type(None)),
            "alloc_ids": [
                {
                    "alloc_id": int,
                    "class": str,
                    "weight": (int, float, type(None)),
                }
            ],
        }
    ],
    "traffic": [
        {
            "alloc_id": int,
            "rate_pps": (int, float),
            "packet_bytes": int,
            "period_us": (int, float, type(None)),
            "offset_us": (int, float),
            "count": (int, type(None)),
        }
    ],
    "sweep": [None],
}

# Flat override name -> path inside the document
SWEEP_KEYS = {
    "name": ("name",),
    "seed": ("seed",),
    "mode": ("mode",),
    "preset": ("preset",),
    "pin_variance": ("pin_variance",),
    "duration_frames": ("duration_frames",),
    "queue_depth_bytes": ("queue_depth_bytes",),
    "reserved_fraction": ("dba", "reserved_fraction"),
    "service_interval_frames": ("dba", "service_interval_frames"),
    "strict_priority": ("dba", "strict_priority"),
    "spare_fill_enabled": ("policy", "spare_fill_enabled"),
    "preempt_enabled": ("policy", "preempt_enabled"),
    "max_preempt_fraction": ("policy", "max_preempt_fraction"),
}


def _line_of(text: str, key: str) -> Optional[int]:
    match = re.search(rf'"{re.escape(key)}"\s*:', text)
    if match is None:
        return None
    return text.count("\n", 0, match.start()) + 1


def _type_name(expected) -> str:
    types = expected if isinstance(expected, tuple) else (expected,)
    return " or ".join("null" if t is type(None) else t.__name__ for t in types)


def _check(value: Any, schema: Any, path: str, text: str) -> None:
    leaf = path.rsplit(".", 1)[-1]
    if schema is None:
        return
    if isinstance(schema, dict):
        if not isinstance(value, dict):
            raise ConfigError("expected an object", key=path, line=_line_of(text, leaf))
        for key, item in value.items():
            child = f"{path}.{key}" if path else key
            if key not in schema:
                raise ConfigError(f"unknown key {key!r}", key=child, line=_line_of(text, key))
            _check(item, schema[key], child, text)
        return
    if isinstance(schema, list):
        if not isinstance(value, list):
            raise ConfigError("expected a list", key=path, line=_line_of(text, leaf))
        for item in value:
            _check(item, schema[0], path, text)
        return
    # bool is an int subclass; only accept it where a bool is expected
    types = schema if isinstance(schema, tuple) else (schema,)
    if isinstance(value, bool) and bool not in types:
        ok = False
    else:
        ok = isinstance(value, types) or (float in types and isinstance(value, int))
    if not ok:
        raise ConfigError(
            f"expected {_type_name(schema)}, got {value!r}", key=path, line=_line_of(text, leaf)
        )


def load_document(text: str) -> Dict[str, Any]:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"invalid JSON: {e.msg}", line=e.lineno) from None
    _check(doc, SCHEMA, "", text)
    return doc


def _located(error: ConfigError, text: str) -> ConfigError:
    if error.line is not None or not error.key:
        return error
    return ConfigError(
        error.message, key=error.key, line=_line_of(text, error.key.rsplit(".", 1)[-1])
    )


def _parse_mode(name: str) -> Mode:
    try:
        return Mode(name)
    except ValueError:
        raise ConfigError(
            f"unknown mode {name!r}; choose from {', '.join(m.value for m in Mode)}",
            key="mode",
        ) from None


def build_scenario(
    doc: Dict[str, Any],
    text: str = "",
    preset_name: Optional[str] = None,
    seed: Optional[int] = None,
    pin_variance: Optional[bool] = None,
    mode: Optional[Mode] = None,
) -> Scenario:
    """Turn a checked document into a Scenario; arguments override the file"""
    params = preset(preset_name or doc.get("preset", DEFAULT_PRESET))
    overrides = doc.get("params", {})
    if not isinstance(overrides, dict):
        raise ConfigError("expected an object", key="params", line=_line_of(text, "params"))
    try:
        params = params.with_overrides(**overrides)
    except ConfigError as e:
        leaf = (e.key or "").rsplit(".", 1)[-1]
        raise ConfigError(e.message, key=e.key, line=_line_of(text, leaf)) from None

    onus = []
    alloc_weights = {}
    try:
        for onu in doc.get("onus", []):
            specs = []
            for entry in onu.get("alloc_ids", []):
                specs.append(
                    AllocIdSpec(
                        alloc_id=entry["alloc_id"],
                        tcont_class=TcontClass(entry.get("class", "best_effort")),
                        weight=entry.get("weight"),
                    )
                )
                if entry.get("weight") is not None:
                    alloc_weights[entry["alloc_id"]] = float(entry["weight"])
            onus.append(
                OnuSpec(
                    onu_id=onu["onu_id"],
                    alloc_ids=specs,
                    fiber_one_way_us=onu.get("fiber_one_way_us"),
                )
            )
    except KeyError as e:
        raise ConfigError(f"missing required key {e.args[0]!r}", key=f"onus.{e.args[0]}") from None
    except ValueError as e:
        raise ConfigError(str(e), key="onus.alloc_ids.class", line=_line_of(text, "class")) from None
    except InvariantViolation as e:
        raise ConfigError(str(e), key="onus.alloc_ids.alloc_id") from None

    try:
        traffic = [TrafficStream(**stream) for stream in doc.get("traffic", [])]
    except TypeError as e:
        raise ConfigError(f"traffic stream: {e}", key="traffic") from None

    dba_doc = dict(doc.get("dba", {}))
    if "weights" in dba_doc:
        dba_doc["weights"] = {TcontClass(k): float(v) for k, v in dba_doc["weights"].items()}
    try:
        dba_cfg = DbaConfig(alloc_weights=alloc_weights, **dba_doc)
        policy = InterceptPolicy(**doc.get("policy", {}))
    except ConfigError as e:
        raise _located(e, text) from None

    scenario = Scenario(
        onus=onus,
        traffic=traffic,
        seed=doc.get("seed", 1) if seed is None else seed,
        duration_frames=doc.get("duration_frames", 1000),
        dba_cfg=dba_cfg,
        policy=policy,
        params=params,
        mode=mode or _parse_mode(doc.get("mode", Mode.FAST_INTERCEPT.value)),
        pin_variance=doc.get("pin_variance", False) if pin_variance is None else pin_variance,
        queue_depth_bytes=doc.get("queue_depth_bytes"),
        drain_frames=doc.get("drain_frames", 16),
        max_packets=doc.get("max_packets"),
        capture_frames=doc.get("capture_frames", 0),
        name=doc.get("name", ""),
    )
    try:
        scenario.validate()
    except ConfigError as e:
        raise _located(e, text) from None
    return scenario


def _read(path: Union[str, Path]) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e.strerror}") from None


def load_scenario(path: Union[str, Path], **overrides) -> Scenario:
    text = _read(path)
    scenario = build_scenario(load_document(text), text, **overrides)
    logger.info(f"Loaded scenario {scenario.name or path} ({scenario.mode.value}, seed {scenario.seed})")
    return scenario


def load_sweep(path: Union[str, Path], **overrides) -> List[Union[Scenario, ConfigError]]:
    """One scenario per entry of "sweep"; entries that do not build yield their error"""
    text = _read(path)
    base = load_document(text)
    entries = base.pop("sweep", None) or [{}]
    scenarios: List[Union[Scenario, ConfigError]] = []
    for index, entry in enumerate(entries):
        if not isinstance(entry, dict):
            scenarios.append(ConfigError("sweep entry must be an object", key=f"sweep[{index}]"))
            continue
        doc = copy.deepcopy(base)
        try:
            for key, value in entry.items():
                if key not in SWEEP_KEYS:
                    raise ConfigError(
                        f"unknown sweep override {key!r}; allowed: {', '.join(sorted(SWEEP_KEYS))}",
                        key=f"sweep.{key}",
                        line=_line_of(text, key),
                    )
                target = doc
                *parents, leaf = SWEEP_KEYS[key]
                for parent in parents:
                    target = target.setdefault(parent, {})
                target[leaf] = value
            _check(doc, SCHEMA, "", text)
            if "name" not in entry:
                doc["name"] = f"{base.get('name', 'sweep')}-{index}"
            scenarios.append(build_scenario(doc, text, **overrides))
        except ConfigError as e:
            logger.error(f"Sweep entry {index} rejected: {e}")
            scenarios.append(e)
    return scenarios

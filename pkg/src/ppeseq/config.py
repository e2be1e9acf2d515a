"""Application config: a YAML file with nested sections, strictly validated.

Example::

    mode: donning
    sequence: default            # or a list of {label, classes}
    fps: 30
    strict: true
    session_timeout_s: 300
    thresholds:
      policy: {alpha: 0.5, floor: 0.25, ceil: 0.9}
      defaults: {th_confidence: 0.5, th_frequency: 5, window_frames: 30, removal_window_frames: 45}
      classes:
        mask: {ap: 0.8}          # derived through the policy
        gloves: {th_confidence: 0.6, th_frequency: 3}
    source: {kind: listener, host: 127.0.0.1, port: 9000}
    sinks:
      - {kind: terminal}
      - {kind: jsonl, path: alerts.jsonl}
      - {kind: webhook, url: "http://10.0.0.5/alerts", timeout_ms: 2000, retry_count: 2}

Unknown keys are rejected with their dotted path so typos surface early.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple, Union

import yaml

from .accumulator import ThresholdPolicy, derive_confidence_threshold
from .errors import ConfigError, InvalidPolicy, InvalidSpec, UnknownClass
from .ingest import FileReplay, NetworkListener, StandardInput, StreamSource
from .types import (
    ClassThreshold,
    ClassThresholds,
    Mode,
    PpeClass,
    SequenceSpec,
    StepSpec,
    default_sequence,
    parse_class,
)

_TOP_KEYS = {"mode", "sequence", "fps", "strict", "session_timeout_s", "thresholds", "source", "sinks"}
_THRESHOLD_FIELDS = ("th_confidence", "th_frequency", "window_frames", "removal_window_frames")
_SOURCE_KEYS = {
    "listener": {"kind", "host", "port"},
    "file": {"kind", "path", "speed_factor", "as_fast_as_possible", "format"},
    "stdin": {"kind"},
}
_SINK_KEYS = {
    "terminal": {"kind", "color"},
    "jsonl": {"kind", "path"},
    "webhook": {"kind", "url", "timeout_ms", "retry_count", "queue_size"},
}


@dataclass(frozen=True)
class SinkConfig:
    kind: str
    path: Optional[str] = None
    url: Optional[str] = None
    timeout_ms: int = 2000
    retry_count: int = 2
    queue_size: int = 256
    color: Optional[bool] = None


@dataclass
class AppConfig:
    mode: Mode = Mode.DONNING
    thresholds: ClassThresholds = field(default_factory=ClassThresholds.uniform)
    sequence: Optional[SequenceSpec] = None
    source: StreamSource = field(default_factory=NetworkListener)
    sinks: List[SinkConfig] = field(default_factory=list)
    fps: float = 30.0
    strict: bool = True
    session_timeout_s: float = 300.0
    source_format: str = "auto"

    @property
    def spec(self) -> SequenceSpec:
        return self.sequence if self.sequence is not None else default_sequence(self.mode)


def _check_keys(section: Any, allowed, path: str) -> Mapping:
    if not isinstance(section, Mapping):
        raise ConfigError(f"{path or 'config'}: expected a mapping, got {type(section).__name__}")
    for key in section:
        if key not in allowed:
            where = f"{path}.{key}" if path else str(key)
            raise ConfigError(f"unknown config key: {where}")
    return section


def _number(value, path: str, *, integer: bool = False, positive: bool = True):
    ok = isinstance(value, int) if integer else isinstance(value, (int, float))
    if not ok or isinstance(value, bool) or (positive and not value > 0):
        kind = "positive integer" if integer else "positive number"
        raise ConfigError(f"{path}: expected a {kind}, got {value!r}")
    return value


def _bool(value, path: str) -> bool:
    if not isinstance(value, bool):
        raise ConfigError(f"{path}: expected true/false, got {value!r}")
    return value


def _class_key(name, path: str) -> PpeClass:
    try:
        return parse_class(name)
    except UnknownClass:
        raise ConfigError(f"unknown config key: {path}.{name} (not a PPE class)") from None


def parse_thresholds(section: Optional[Mapping], path: str = "thresholds") -> ClassThresholds:
    section = _check_keys(section or {}, {"policy", "defaults", "classes"}, path)
    try:
        policy = ThresholdPolicy(**_check_keys(section.get("policy", {}), {"alpha", "floor", "ceil"}, f"{path}.policy"))
    except (InvalidPolicy, TypeError) as exc:
        raise ConfigError(f"{path}.policy: {exc}") from None
    defaults = dict(_check_keys(section.get("defaults", {}), set(_THRESHOLD_FIELDS), f"{path}.defaults"))
    try:
        default = ClassThreshold(**defaults)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{path}.defaults: {exc}") from None

    per_class: Dict[PpeClass, ClassThreshold] = {}
    classes = _check_keys(section.get("classes", {}) or {}, _AnyKey(), f"{path}.classes")
    for name, entry in classes.items():
        cls = _class_key(name, f"{path}.classes")
        cpath = f"{path}.classes.{name}"
        entry = dict(_check_keys(entry or {}, set(_THRESHOLD_FIELDS) | {"ap"}, cpath))
        if "ap" in entry and "th_confidence" in entry:
            raise ConfigError(f"{cpath}: give either ap or th_confidence, not both")
        if "ap" in entry:
            ap = entry.pop("ap")
            if not isinstance(ap, (int, float)) or isinstance(ap, bool) or not 0 <= ap <= 1:
                raise ConfigError(f"{cpath}.ap: expected a number in [0, 1], got {ap!r}")
            entry["th_confidence"] = derive_confidence_threshold(ap, policy)
        merged = {**defaults, **entry}
        try:
            per_class[cls] = ClassThreshold(**merged)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"{cpath}: {exc}") from None
    return ClassThresholds.from_partial(per_class, default)


class _AnyKey:
    def __contains__(self, key) -> bool:
        return True


def parse_sequence(value, mode: Mode, path: str = "sequence") -> Optional[SequenceSpec]:
    if value is None or value == "default":
        return None
    if not isinstance(value, list):
        raise ConfigError(f"{path}: expected 'default' or a list of steps")
    steps = []
    for i, raw in enumerate(value):
        spath = f"{path}[{i}]"
        raw = _check_keys(raw, {"label", "classes"}, spath)
        classes = raw.get("classes")
        if isinstance(classes, str):
            classes = [classes]
        if not isinstance(classes, list):
            raise ConfigError(f"{spath}.classes: expected a list of class names")
        try:
            parsed = tuple(parse_class(c) for c in classes)
            steps.append(StepSpec(parsed, str(raw.get("label") or "/".join(c.value for c in parsed))))
        except (UnknownClass, InvalidSpec) as exc:
            raise ConfigError(f"{spath}: {exc}") from None
    try:
        return SequenceSpec(mode, tuple(steps))
    except InvalidSpec as exc:
        raise ConfigError(f"{path}: {exc}") from None


def parse_source(section: Optional[Mapping], path: str = "source") -> Tuple[StreamSource, str]:
    section = section or {"kind": "listener"}
    if not isinstance(section, Mapping):
        raise ConfigError(f"{path}: expected a mapping")
    kind = section.get("kind", "listener")
    if kind not in _SOURCE_KEYS:
        raise ConfigError(f"{path}.kind: expected one of {sorted(_SOURCE_KEYS)}, got {kind!r}")
    _check_keys(section, _SOURCE_KEYS[kind], path)
    if kind == "listener":
        port = section.get("port", 9000)
        if not isinstance(port, int) or isinstance(port, bool) or not 0 <= port <= 65535:
            raise ConfigError(f"{path}.port: expected 0-65535, got {port!r}")
        return NetworkListener(str(section.get("host", "127.0.0.1")), port), "native"
    if kind == "file":
        if "path" not in section:
            raise ConfigError(f"{path}.path: required for file sources")
        fmt = section.get("format", "auto")
        if fmt not in ("auto", "native", "darknet"):
            raise ConfigError(f"{path}.format: expected auto, native or darknet, got {fmt!r}")
        speed = _number(section.get("speed_factor", 1.0), f"{path}.speed_factor")
        fast = _bool(section.get("as_fast_as_possible", False), f"{path}.as_fast_as_possible")
        return FileReplay(str(section["path"]), speed, fast), fmt
    return StandardInput(), "native"


def parse_sinks(value, path: str = "sinks") -> List[SinkConfig]:
    if value is None:
        return []
    if not isinstance(value, list):
        raise ConfigError(f"{path}: expected a list")
    out = []
    for i, raw in enumerate(value):
        spath = f"{path}[{i}]"
        if not isinstance(raw, Mapping) or raw.get("kind") not in _SINK_KEYS:
            raise ConfigError(f"{spath}.kind: expected one of {sorted(_SINK_KEYS)}")
        _check_keys(raw, _SINK_KEYS[raw["kind"]], spath)
        kind = raw["kind"]
        if kind == "jsonl" and not raw.get("path"):
            raise ConfigError(f"{spath}.path: required for jsonl sinks")
        if kind == "webhook":
            if not raw.get("url"):
                raise ConfigError(f"{spath}.url: required for webhook sinks")
            _number(raw.get("timeout_ms", 2000), f"{spath}.timeout_ms", integer=True)
            retries = raw.get("retry_count", 2)
            if not isinstance(retries, int) or isinstance(retries, bool) or retries < 0:
                raise ConfigError(f"{spath}.retry_count: expected an integer >= 0, got {retries!r}")
            _number(raw.get("queue_size", 256), f"{spath}.queue_size", integer=True)
        if "color" in raw and raw["color"] is not None:
            _bool(raw["color"], f"{spath}.color")
        out.append(SinkConfig(**{k: v for k, v in raw.items()}))
    return out


def config_from_dict(data: Optional[Mapping]) -> AppConfig:
    data = _check_keys(data or {}, _TOP_KEYS, "")
    try:
        mode = Mode.parse(data.get("mode", "donning"))
    except ValueError as exc:
        raise ConfigError(f"mode: {exc}") from None
    source, fmt = parse_source(data.get("source"))
    return AppConfig(
        mode=mode,
        thresholds=parse_thresholds(data.get("thresholds")),
        sequence=parse_sequence(data.get("sequence"), mode),
        source=source,
        sinks=parse_sinks(data.get("sinks")),
        fps=float(_number(data.get("fps", 30.0), "fps")),
        strict=_bool(data.get("strict", True), "strict"),
        session_timeout_s=float(_number(data.get("session_timeout_s", 300.0), "session_timeout_s")),
        source_format=fmt,
    )


def load_raw(path: Union[str, Path, None]) -> Dict:
    if path is None:
        return {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML: {exc}") from None
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"config {path}: top level must be a mapping")
    return data


def _set_path(data: Dict, dotted: str, value) -> Dict:
    keys = [k for k in dotted.strip().split(".") if k]
    if not keys:
        raise ConfigError(f"override for {dotted!r} has an empty key")
    out = copy.deepcopy(data)
    node = out
    for k in keys[:-1]:
        nxt = node.get(k)
        if nxt is None:
            nxt = node[k] = {}
        if not isinstance(nxt, dict):
            raise ConfigError(f"cannot override {dotted}: {k} is not a section")
        node = nxt
    node[keys[-1]] = value
    return out


def apply_override(data: Dict, assignment: str) -> Dict:
    """Apply a ``dotted.key=value`` override; the value is parsed as YAML."""
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} must look like key.path=value")
    dotted, raw = assignment.split("=", 1)
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigError(f"override {assignment!r}: {exc}") from None
    return _set_path(data, dotted, value)


def load_config(path=None, overrides: Optional[Dict[str, Any]] = None, assignments=()) -> AppConfig:
    """File, then ``--set`` assignments, then explicit flag values (``None`` = not given)."""
    data = load_raw(path)
    for a in assignments:
        data = apply_override(data, a)
    for dotted, value in (overrides or {}).items():
        if value is not None:
            data = _set_path(data, dotted, value)
    return config_from_dict(data)


def starter_config(aps: Mapping[PpeClass, float], policy: ThresholdPolicy = ThresholdPolicy()) -> Dict:
    """Config dict with confidence thresholds derived from per-class AP values."""
    defaults = ClassThreshold()
    classes = {}
    for cls, ap in aps.items():
        classes[cls.value] = {"th_confidence": round(derive_confidence_threshold(ap, policy), 6)}
    return {
        "mode": "donning",
        "sequence": "default",
        "fps": 30,
        "strict": True,
        "session_timeout_s": 300,
        "thresholds": {
            "policy": {"alpha": policy.alpha, "floor": policy.floor, "ceil": policy.ceil},
            "defaults": {f: getattr(defaults, f) for f in _THRESHOLD_FIELDS},
            "classes": classes,
        },
        "source": {"kind": "listener", "host": "127.0.0.1", "port": 9000},
        "sinks": [{"kind": "terminal"}],
    }

"""Run configuration: one YAML/JSON file plus command-line overrides.

Relative paths in a config file resolve against the file's directory. Every
output artifact embeds the resolved config in its header, and any such
artifact (``graphs.json``, the first line of ``events.jsonl``, ...) can be
passed back as ``--config`` to repeat the run.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping

import yaml

from .android import LogcatConfig
from .errors import ConfigError, SchemaError
from .mapping import MapConfig
from .matching import DEFAULT_MAX_NODES, DEFAULT_ROUNDS
from .scdg import (
    DEFAULT_ASHMEM_DEVICES,
    DEFAULT_BINDER_DEVICES,
    SCHEMA_VERSION,
    DependenceRuleSet,
    PathClassifier,
    default_normalization,
    load_normalization,
)
from .trace import DEFAULT_NOISE, DEFAULT_OUTPARAM_SYSCALLS, ParseConfig

PATH_KEYS = ("logcat_path", "manifest_path", "perm_map_path", "service_map_path", "signature_store_path")


@dataclass(frozen=True)
class RunConfig:
    trace_paths: tuple[str, ...] = ()
    logcat_path: str | None = None
    manifest_path: str | None = None
    perm_map_path: str | None = None
    service_map_path: str | None = None
    signature_store_path: str | None = None
    output_dir: str = "."
    rules: DependenceRuleSet = field(default_factory=DependenceRuleSet)
    map: MapConfig = field(default_factory=MapConfig)
    noise: frozenset[str] = DEFAULT_NOISE
    outparam_syscalls: frozenset[str] = DEFAULT_OUTPARAM_SYSCALLS
    normalization: Mapping[str, str] = field(default_factory=default_normalization)
    pid_package_map: Mapping[int, str] = field(default_factory=dict)
    binder_devices: frozenset[str] = DEFAULT_BINDER_DEVICES
    ashmem_devices: frozenset[str] = DEFAULT_ASHMEM_DEVICES
    marker_tag: str = "APICALL"
    min_match_size: int = 2
    max_nodes: int = DEFAULT_MAX_NODES
    hash_rounds: int = DEFAULT_ROUNDS
    use_attributes: bool = False

    @property
    def trace_path(self) -> str | None:
        return self.trace_paths[0] if self.trace_paths else None

    def parse_config(self) -> ParseConfig:
        return ParseConfig(self.noise, self.outparam_syscalls, dict(self.pid_package_map))

    def logcat_config(self) -> LogcatConfig:
        return LogcatConfig(self.marker_tag)

    def classifier(self) -> PathClassifier:
        return PathClassifier(self.binder_devices, self.ashmem_devices)

    def to_dict(self) -> dict:
        """Everything that affects outputs. ``output_dir`` is left out so the
        header of an artifact does not depend on where it was written."""
        return {
            "trace_paths": list(self.trace_paths),
            **{key: getattr(self, key) for key in PATH_KEYS},
            "rules": self.rules.to_dict(),
            "map": self.map.to_dict(),
            "noise": sorted(self.noise),
            "outparam_syscalls": sorted(self.outparam_syscalls),
            "normalization": dict(sorted(self.normalization.items())),
            "pid_package_map": {str(k): v for k, v in sorted(self.pid_package_map.items())},
            "binder_devices": sorted(self.binder_devices),
            "ashmem_devices": sorted(self.ashmem_devices),
            "marker_tag": self.marker_tag,
            "min_match_size": self.min_match_size,
            "max_nodes": self.max_nodes,
            "hash_rounds": self.hash_rounds,
            "use_attributes": self.use_attributes,
        }

    def require(self, *keys: str) -> None:
        """Check that the named inputs are configured and exist."""
        missing = []
        for key in keys:
            if key == "trace_paths":
                if not self.trace_paths:
                    missing.append("trace")
                for p in self.trace_paths:
                    if not Path(p).is_file():
                        raise ConfigError(f"trace file not found: {p}")
                continue
            value = getattr(self, key)
            if value is None:
                missing.append(key.removesuffix("_path"))
            elif key != "signature_store_path" and not Path(value).is_file():
                raise ConfigError(f"{key.removesuffix('_path')} file not found: {value}")
        if missing:
            raise ConfigError("missing required input(s): " + ", ".join(missing))


def _resolve(base: Path, value: str | None) -> str | None:
    if value is None:
        return None
    p = Path(value).expanduser()
    return str(p if p.is_absolute() else (base / p).resolve())


def _str_set(data: Mapping, key: str, default: frozenset[str]) -> frozenset[str]:
    value = data.get(key)
    if value is None:
        return default
    if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
        raise ConfigError(f"{key} must be a list of strings")
    return frozenset(value)


def config_from_dict(data: Mapping[str, Any], base_dir: str | Path = ".") -> RunConfig:
    known = set(RunConfig.__dataclass_fields__) | {"trace", "trace_path"}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    base = Path(base_dir)

    traces = data.get("trace_paths", data.get("trace", data.get("trace_path", [])))
    if isinstance(traces, str):
        traces = [traces]
    if not isinstance(traces, list):
        raise ConfigError("trace_paths must be a path or a list of paths")

    norm = data.get("normalization")
    if norm is None:
        normalization = default_normalization()
    elif isinstance(norm, str):
        try:
            normalization = load_normalization(_resolve(base, norm))
        except (OSError, SchemaError, json.JSONDecodeError) as exc:
            raise ConfigError(f"normalization table {norm}: {exc}") from None
    elif isinstance(norm, Mapping):
        normalization = {str(k): str(v) for k, v in norm.items()}
    else:
        raise ConfigError("normalization must be a file path or a mapping")

    try:
        rules = DependenceRuleSet.from_dict(data.get("rules") or {})
        map_cfg = MapConfig(**(data.get("map") or {}))
        pid_map = {int(k): str(v) for k, v in (data.get("pid_package_map") or {}).items()}
    except (SchemaError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid config: {exc}") from None

    kwargs = {key: _resolve(base, data.get(key)) for key in PATH_KEYS}
    return RunConfig(
        trace_paths=tuple(_resolve(base, t) for t in traces),
        output_dir=_resolve(base, data.get("output_dir", ".")),
        rules=rules,
        map=map_cfg,
        noise=_str_set(data, "noise", DEFAULT_NOISE),
        outparam_syscalls=_str_set(data, "outparam_syscalls", DEFAULT_OUTPARAM_SYSCALLS),
        normalization=normalization,
        pid_package_map=pid_map,
        binder_devices=_str_set(data, "binder_devices", DEFAULT_BINDER_DEVICES),
        ashmem_devices=_str_set(data, "ashmem_devices", DEFAULT_ASHMEM_DEVICES),
        marker_tag=str(data.get("marker_tag", "APICALL")),
        min_match_size=int(data.get("min_match_size", 2)),
        max_nodes=int(data.get("max_nodes", DEFAULT_MAX_NODES)),
        hash_rounds=int(data.get("hash_rounds", DEFAULT_ROUNDS)),
        use_attributes=bool(data.get("use_attributes", False)),
        **kwargs,
    )


def _header(text: str) -> Mapping | None:
    """The header of an output artifact, if ``text`` is one."""
    first = text.lstrip().split("\n", 1)[0]
    for candidate in (first, text):
        try:
            doc = json.loads(candidate)
        except json.JSONDecodeError:
            continue
        if isinstance(doc, dict) and isinstance(doc.get("header"), dict) and "config" in doc["header"]:
            return doc["header"]
    return None


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    header = _header(text) if text.lstrip().startswith("{") else None
    if header is not None:
        data = dict(header["config"])
        if header.get("command") == "sign":
            # a signature store is its own output location
            data.setdefault("signature_store_path", str(path.resolve()))
        return config_from_dict(data, path.parent)
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"{path}:{mark.line + 1}" if mark else str(path)
        raise ConfigError(f"{where}: config does not parse ({getattr(exc, 'problem', exc)})") from None
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: config must be a mapping")
    return config_from_dict(data, path.parent)


def with_overrides(config: RunConfig, **overrides: Any) -> RunConfig:
    """Apply command-line overrides; ``None`` values leave the config as is."""
    changes: dict[str, Any] = {}
    map_changes: dict[str, int] = {}
    for key, value in overrides.items():
        if value is None or value == ():
            continue
        if key in ("max_window_us", "clock_offset_us"):
            map_changes[key] = int(value)
        elif key == "trace_paths":
            changes[key] = tuple(str(Path(p).resolve()) for p in value)
        elif key in PATH_KEYS or key == "output_dir":
            changes[key] = str(Path(value).resolve())
        else:
            changes[key] = value
    if map_changes:
        changes["map"] = replace(config.map, **map_changes)
    return replace(config, **changes)


def make_header(config: RunConfig, command: str) -> dict:
    from . import __version__

    data = config.to_dict()
    if command == "sign":
        del data["signature_store_path"]
    return {"schema_version": SCHEMA_VERSION, "tool": "scdgmap", "version": __version__,
            "command": command, "config": data}

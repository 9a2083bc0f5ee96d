"""Android-side inputs: logcat API events, manifest permissions, API->permission map.

Logcat lines use the epoch format (``logcat -v epoch``)::

    1553102851.100  1234  1241 I APICALL: android.hardware.Camera.open

API invocations are expected under one marker tag whose message is the fully
qualified method name. All other lines are ignored and counted.
"""
from __future__ import annotations

import json
import re
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping

from .errors import DuplicateApiEntry, MalformedLine, MissingPackageName, SchemaError, XmlParseError

ANDROID_NS = "{http://schemas.android.com/apk/res/android}"
PERMISSION_TAGS = ("uses-permission", "uses-permission-sdk-23", "uses-permission-sdk-m")

_LOGCAT = re.compile(
    r"\s*(?P<sec>\d+)\.(?P<frac>\d{1,6})\s+(?P<pid>\d+)\s+(?P<tid>\d+)\s+"
    r"(?P<level>[VDIWEFAS])\s+(?P<tag>[^:]*?)\s*:\s?(?P<msg>.*?)\s*\Z"
)
_API_NAME = re.compile(r"[A-Za-z_$][\w$]*(?:\.[A-Za-z_$<][\w$<>]*)+\Z")
_PERMISSION = re.compile(r"[A-Za-z_.]+\Z")


@dataclass(frozen=True, order=True)
class ApiEvent:
    timestamp_us: int
    pid: int
    tid: int
    api_name: str
    tag: str = "APICALL"

    def __post_init__(self) -> None:
        if not self.api_name or "." not in self.api_name:
            raise ValueError(f"api_name must be a qualified method name, got {self.api_name!r}")

    def to_dict(self) -> dict:
        return {"t_us": self.timestamp_us, "pid": self.pid, "tid": self.tid, "api_name": self.api_name, "tag": self.tag}

    @classmethod
    def from_dict(cls, d: Mapping) -> ApiEvent:
        return cls(int(d["t_us"]), int(d["pid"]), int(d["tid"]), str(d["api_name"]), str(d.get("tag", "APICALL")))


@dataclass(frozen=True)
class LogcatConfig:
    marker_tag: str = "APICALL"


@dataclass
class ApiEventLog:
    """Parsed API events plus the number of lines that were not API calls."""

    events: list[ApiEvent]
    ignored_count: int = 0
    source_path: str = "<memory>"

    def __iter__(self) -> Iterator[ApiEvent]:
        return iter(self.events)

    def __len__(self) -> int:
        return len(self.events)

    def __getitem__(self, i):
        return self.events[i]


def parse_api_lines(lines: Iterable[str], config: LogcatConfig | None = None,
                    source_path: str = "<memory>") -> ApiEventLog:
    config = config or LogcatConfig()
    tag = config.marker_tag
    loose = re.compile(r"(?:^|\s)" + re.escape(tag) + r"\s*:")
    events: list[ApiEvent] = []
    ignored = 0
    for position, line in enumerate(lines, start=1):
        line = line.rstrip("\r\n")
        m = _LOGCAT.match(line)
        if m is None or m.group("tag") != tag:
            if m is None and loose.search(line):
                raise MalformedLine(position, f"{tag} line does not match the epoch logcat grammar", source_path, line)
            ignored += 1
            continue
        api = m.group("msg")
        if not _API_NAME.match(api):
            raise MalformedLine(position, f"{tag} message {api!r} is not a qualified method name", source_path, line)
        t_us = int(m.group("sec")) * 1_000_000 + int(m.group("frac").ljust(6, "0"))
        events.append(ApiEvent(t_us, int(m.group("pid")), int(m.group("tid")), api, tag))
    events.sort()
    return ApiEventLog(events, ignored, source_path)


def load_api_events(path: str | Path, config: LogcatConfig | None = None) -> ApiEventLog:
    with open(path, encoding="utf-8", errors="replace") as fh:
        return parse_api_lines(fh, config, str(path))


@dataclass(frozen=True)
class PermissionManifest:
    pid: int
    packname: str
    permissions: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not self.packname:
            raise MissingPackageName("manifest has no package name")
        if len(set(self.permissions)) != len(self.permissions):
            raise ValueError("permissions must be unique")

    def as_vector(self) -> tuple:
        """The ``(pid, packname, perm1, ..., permN)`` vector."""
        return (self.pid, self.packname, *self.permissions)

    def to_dict(self) -> dict:
        return {"pid": self.pid, "packname": self.packname, "permissions": list(self.permissions)}


def parse_manifest(path: str | Path, pid_map: Mapping[int, str] | None = None) -> PermissionManifest:
    try:
        root = ET.parse(path).getroot()
    except ET.ParseError as exc:
        raise XmlParseError(exc.position, str(exc), str(path)) from None
    package = root.get("package")
    if not package:
        raise MissingPackageName(f"{path}: <{root.tag}> has no package attribute")
    seen: dict[str, None] = {}
    for elem in root.iter():
        if elem.tag in PERMISSION_TAGS:
            name = elem.get(ANDROID_NS + "name") or elem.get("name")
            if name:
                seen.setdefault(name, None)
    pids = sorted(pid for pid, pkg in (pid_map or {}).items() if pkg == package)
    return PermissionManifest(pids[0] if pids else 0, package, tuple(seen))


@dataclass(frozen=True)
class ApiPermissionMap:
    entries: Mapping[str, frozenset[str]] = field(default_factory=dict)

    def permissions_for(self, api_name: str) -> frozenset[str]:
        return self.entries.get(api_name, frozenset())

    def __contains__(self, api_name: str) -> bool:
        return api_name in self.entries

    def __len__(self) -> int:
        return len(self.entries)


def load_api_permission_map(path: str | Path) -> ApiPermissionMap:
    def pairs_hook(pairs):
        out = {}
        for key, value in pairs:
            if key in out:
                raise DuplicateApiEntry(key, str(path))
            out[key] = value
        return out

    with open(path, encoding="utf-8") as fh:
        try:
            data = json.load(fh, object_pairs_hook=pairs_hook)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}:{exc.lineno}: not valid JSON ({exc.msg})") from None
    if not isinstance(data, dict):
        raise SchemaError(f"{path}: expected an object of api_name -> [permission, ...]")
    entries: dict[str, frozenset[str]] = {}
    for api, perms in data.items():
        if not api or not isinstance(perms, list):
            raise SchemaError(f"{path}: entry {api!r} must map to an array of permission strings")
        for p in perms:
            if not isinstance(p, str) or not _PERMISSION.match(p):
                raise SchemaError(f"{path}: invalid permission {p!r} for {api}")
        entries[api] = frozenset(perms)
    return ApiPermissionMap(entries)

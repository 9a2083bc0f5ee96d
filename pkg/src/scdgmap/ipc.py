"""Binder and ashmem interactions found inside SCDGs.

Binder payloads are not decoded. A callee is resolved from a handle token that
appears in the ioctl argument text (``handle=<token>``) through a user supplied
service map, e.g. ``{"/dev/binder#handle:camera": "media.camera"}``. Keys
without ``#`` are device path patterns (``fnmatch`` syntax).
"""
from __future__ import annotations

import fnmatch
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Mapping, Sequence

from .errors import SchemaError
from .scdg import DEFAULT_ASHMEM_DEVICES, DEFAULT_BINDER_DEVICES, Scdg, literal_path
from .trace import SyscallEvent, TraceSession

_HANDLE = re.compile(r"handle[=:]\s*([A-Za-z0-9_.:\-]+)")


@dataclass(frozen=True)
class Unresolved:
    token: str | None = None

    def __str__(self) -> str:
        return f"unresolved:{self.token}" if self.token else "unresolved"


@dataclass(frozen=True)
class IpcInteraction:
    event_id: int
    mechanism: str
    caller_pid: int
    request: str
    callee: str | Unresolved
    graph_id: int = -1
    device: str = ""

    @property
    def resolved(self) -> bool:
        return not isinstance(self.callee, Unresolved)

    def to_dict(self) -> dict:
        return {
            "event_id": self.event_id,
            "graph_id": self.graph_id,
            "mechanism": self.mechanism,
            "caller_pid": self.caller_pid,
            "request": self.request,
            "device": self.device,
            "callee": str(self.callee),
            "resolved": self.resolved,
        }


@dataclass(frozen=True)
class ServiceMap:
    entries: Mapping[str, str] = field(default_factory=dict)

    def resolve(self, device: str, token: str | None) -> str | None:
        if token is not None:
            for key in (f"{device}#handle:{token}", f"handle:{token}"):
                if key in self.entries:
                    return self.entries[key]
        for key in sorted(self.entries):
            if "#" not in key and not key.startswith("handle:") and fnmatch.fnmatchcase(device, key):
                return self.entries[key]
        return None


def _reject_duplicates(pairs):
    out = {}
    for key, value in pairs:
        if key in out:
            raise SchemaError(f"duplicate service map key {key!r}")
        out[key] = value
    return out


def load_service_map(path: str | Path) -> ServiceMap:
    with open(path, encoding="utf-8") as fh:
        try:
            data = json.load(fh, object_pairs_hook=_reject_duplicates)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}:{exc.lineno}: service map is not valid JSON ({exc.msg})") from None
    if not isinstance(data, dict) or not all(isinstance(v, str) for v in data.values()):
        raise SchemaError(f"{path}: service map must be an object of key -> service name")
    return ServiceMap(data)


@dataclass
class IpcAnalysis:
    interactions: list[IpcInteraction]
    diagnostics: list[str]

    def __iter__(self) -> Iterator[IpcInteraction]:
        return iter(self.interactions)

    def __len__(self) -> int:
        return len(self.interactions)

    def __getitem__(self, i: int) -> IpcInteraction:
        return self.interactions[i]


def _origin_path(event_id: int, fd_in: Mapping[tuple[int, int], int], by_id: Mapping[int, SyscallEvent],
                 arg_index: int) -> tuple[str | None, bool]:
    """Walk fd edges back from ``(event, arg)`` to the call that opened the fd."""
    source = fd_in.get((event_id, arg_index))
    if source is None:
        return None, False
    seen = set()
    while source not in seen:
        seen.add(source)
        path = literal_path(by_id[source])
        if path is not None:
            return path, True
        nxt = next((src for (dst, _), src in fd_in.items() if dst == source), None)
        if nxt is None:
            break
        source = nxt
    return None, True


def extract_ipc(
    scdgs: Sequence[Scdg],
    session: TraceSession,
    service_map: ServiceMap | None = None,
    binder_devices: frozenset[str] = DEFAULT_BINDER_DEVICES,
    ashmem_devices: frozenset[str] = DEFAULT_ASHMEM_DEVICES,
) -> IpcAnalysis:
    service_map = service_map or ServiceMap()
    by_id = {e.event_id: e for e in session.events}
    interactions: list[IpcInteraction] = []
    diagnostics: list[str] = []

    for g in scdgs:
        fd_in: dict[tuple[int, int], int] = {}
        for edge in g.edges:
            if edge.kind in ("fd-flow", "fd-alias"):
                fd_in.setdefault((edge.to_event, edge.to_arg_index), edge.from_event)
        for node in g.nodes:
            event = by_id[node.node_id]
            if event.name == "ioctl":
                path, traced = _origin_path(event.event_id, fd_in, by_id, 0)
                if not traced:
                    fd = event.args[0].raw if event.args else "?"
                    diagnostics.append(
                        f"event {event.event_id} (pid {event.pid}): ioctl on fd {fd} has no traceable producer"
                    )
                    continue
                if path in binder_devices:
                    mechanism = "binder"
                elif path in ashmem_devices:
                    mechanism = "ashmem"
                else:
                    continue
                request = event.args[1].raw if len(event.args) > 1 else "?"
                token = None
                for arg in event.args[2:]:
                    m = _HANDLE.search(arg.raw)
                    if m:
                        token = m.group(1)
                        break
                callee = service_map.resolve(path, token)
                interactions.append(
                    IpcInteraction(event.event_id, mechanism, event.pid, request,
                                   callee if callee is not None else Unresolved(token), g.graph_id, path)
                )
            elif node.label == "mmap":
                path, traced = _origin_path(event.event_id, fd_in, by_id, 4)
                if traced and path in ashmem_devices:
                    callee = service_map.resolve(path, None)
                    interactions.append(
                        IpcInteraction(event.event_id, "ashmem", event.pid, "mmap",
                                       callee if callee is not None else Unresolved(), g.graph_id, path)
                    )

    interactions.sort(key=lambda i: i.event_id)
    return IpcAnalysis(interactions, diagnostics)

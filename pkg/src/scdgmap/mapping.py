"""Timestamp alignment of SCDGs with logged API invocations.

Only API entry times are logged, so each API call owns a window from its own
timestamp to the next API call on the same thread, capped at
``max_window_us``. A graph goes to the window holding the most of its node
timestamps (earlier window on ties). Windows are keyed by thread: the task id
strace prints in its PID column is the same kernel id logcat reports as TID.
"""
from __future__ import annotations

import json
from bisect import bisect_right
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .android import ApiEvent
from .ipc import IpcInteraction
from .scdg import SCHEMA_VERSION, Scdg


@dataclass(frozen=True)
class MapConfig:
    max_window_us: int = 500_000
    clock_offset_us: int = 0

    def to_dict(self) -> dict:
        return {"max_window_us": self.max_window_us, "clock_offset_us": self.clock_offset_us}


@dataclass(frozen=True)
class ApiWindow:
    api: ApiEvent
    start_us: int
    end_us: int

    def __contains__(self, t_us: int) -> bool:
        return self.start_us <= t_us < self.end_us


@dataclass(frozen=True)
class Assignment:
    graph_id: int
    api_name: str
    api_t_us: int
    overlap: float
    api_pid: int
    api_tid: int

    def to_dict(self) -> dict:
        return {
            "graph_id": self.graph_id,
            "api_name": self.api_name,
            "api_t_us": self.api_t_us,
            "api_pid": self.api_pid,
            "api_tid": self.api_tid,
            "overlap": self.overlap,
        }


@dataclass(frozen=True)
class MappingReport:
    assignments: tuple[Assignment, ...] = ()
    unmapped_graphs: tuple[int, ...] = ()
    unevidenced_apis: tuple[ApiEvent, ...] = ()
    ipc: tuple[IpcInteraction, ...] = ()
    clock_offset_us: int = 0
    api_events: tuple[ApiEvent, ...] = field(default=(), compare=False)

    def assignment_for(self, graph_id: int) -> Assignment | None:
        for a in self.assignments:
            if a.graph_id == graph_id:
                return a
        return None

    def graphs_for(self, api_name: str) -> list[int]:
        return [a.graph_id for a in self.assignments if a.api_name == api_name]

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "clock_offset_us": self.clock_offset_us,
            "assignments": [a.to_dict() for a in self.assignments],
            "unmapped_graphs": list(self.unmapped_graphs),
            "unevidenced_apis": [a.to_dict() for a in self.unevidenced_apis],
            "api_events": [a.to_dict() for a in self.api_events],
            "ipc": [i.to_dict() for i in self.ipc],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_dict(cls, d: Mapping) -> MappingReport:
        return cls(
            assignments=tuple(
                Assignment(a["graph_id"], a["api_name"], a["api_t_us"], a["overlap"], a["api_pid"], a["api_tid"])
                for a in d["assignments"]
            ),
            unmapped_graphs=tuple(d["unmapped_graphs"]),
            unevidenced_apis=tuple(ApiEvent.from_dict(a) for a in d["unevidenced_apis"]),
            clock_offset_us=d.get("clock_offset_us", 0),
            api_events=tuple(ApiEvent.from_dict(a) for a in d.get("api_events", ())),
        )


def build_windows(apis: Sequence[ApiEvent], config: MapConfig) -> dict[int, list[ApiWindow]]:
    """Windows per thread id, each list ordered by start time."""
    streams: dict[tuple[int, int], list[ApiEvent]] = {}
    for api in sorted(apis):
        streams.setdefault((api.pid, api.tid), []).append(api)
    by_tid: dict[int, list[ApiWindow]] = {}
    for (_, tid), stream in sorted(streams.items()):
        for i, api in enumerate(stream):
            start = api.timestamp_us + config.clock_offset_us
            end = start + config.max_window_us
            if i + 1 < len(stream):
                end = min(end, stream[i + 1].timestamp_us + config.clock_offset_us)
            by_tid.setdefault(tid, []).append(ApiWindow(api, start, end))
    for windows in by_tid.values():
        windows.sort(key=lambda w: (w.start_us, w.api))
    return by_tid


def assign_scdgs_to_apis(
    scdgs: Sequence[Scdg],
    apis: Sequence[ApiEvent],
    config: MapConfig | None = None,
    ipc: Sequence[IpcInteraction] = (),
) -> MappingReport:
    config = config or MapConfig()
    by_tid = build_windows(apis, config)
    starts = {tid: [w.start_us for w in ws] for tid, ws in by_tid.items()}
    assignments: list[Assignment] = []
    unmapped: list[int] = []
    used: set[ApiWindow] = set()

    for g in scdgs:
        windows = by_tid.get(g.pid)
        times = g.node_times or (g.span_us[0],) * len(g.nodes)
        counts: dict[int, int] = {}
        if windows:
            st = starts[g.pid]
            for t in times:
                # windows on one thread never overlap; the candidate is the last one starting at or before t
                i = bisect_right(st, t) - 1
                if i >= 0 and t in windows[i]:
                    counts[i] = counts.get(i, 0) + 1
        if not counts:
            unmapped.append(g.graph_id)
            continue
        best = min(counts, key=lambda i: (-counts[i], i))
        w = windows[best]
        used.add(w)
        assignments.append(
            Assignment(g.graph_id, w.api.api_name, w.api.timestamp_us, counts[best] / len(times), w.api.pid, w.api.tid)
        )

    unevidenced = sorted(w.api for ws in by_tid.values() for w in ws if w not in used)
    return MappingReport(
        assignments=tuple(sorted(assignments, key=lambda a: a.graph_id)),
        unmapped_graphs=tuple(sorted(unmapped)),
        unevidenced_apis=tuple(unevidenced),
        ipc=tuple(ipc),
        clock_offset_us=config.clock_offset_us,
        api_events=tuple(sorted(apis)),
    )

"""Data-dependence edges between syscalls and their decomposition into SCDGs."""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from importlib import resources
from typing import Iterable, Mapping, Sequence

from .errors import SchemaError
from .trace import SyscallEvent, TraceSession

SCHEMA_VERSION = 1

EDGE_KINDS = ("fd-flow", "fd-alias", "mmap-address", "value-match")
PATH_CLASSES = ("app-data", "external-storage", "dev-binder", "dev-ashmem", "system", "other")

DEFAULT_BINDER_DEVICES = frozenset({"/dev/binder", "/dev/hwbinder", "/dev/vndbinder"})
DEFAULT_ASHMEM_DEVICES = frozenset({"/dev/ashmem"})

# argument counts, used to validate consumer indices
SYSCALL_ARITY = {
    "read": 3, "write": 3, "close": 1, "ioctl": 3, "fstat": 2, "fstat64": 2, "mmap": 6, "mmap2": 6,
    "pread64": 4, "pwrite64": 4, "lseek": 3, "_llseek": 5, "fcntl": 3, "fcntl64": 3, "sendto": 6,
    "recvfrom": 6, "sendmsg": 3, "recvmsg": 3, "connect": 3, "bind": 3, "listen": 2, "accept": 3,
    "accept4": 4, "getdents64": 3, "fsync": 1, "fdatasync": 1, "readv": 3, "writev": 3,
    "ftruncate": 2, "fchmod": 2, "fchown": 3, "flock": 2, "getsockopt": 5, "setsockopt": 5,
    "shutdown": 2, "openat": 4, "newfstatat": 4, "fstatat64": 4, "sendfile": 4, "epoll_ctl": 4,
    "dup": 1, "dup2": 2, "dup3": 3, "munmap": 2, "msync": 3, "mprotect": 3, "madvise": 3,
    "pipe": 1, "pipe2": 2, "socketpair": 4, "open": 3, "socket": 3, "memfd_create": 2,
}

_DEFAULT_CONSUMERS: dict[str, tuple[int, ...]] = {
    name: (0,)
    for name in (
        "read", "write", "close", "ioctl", "fstat", "fstat64", "pread64", "pwrite64", "lseek",
        "_llseek", "fcntl", "fcntl64", "sendto", "recvfrom", "sendmsg", "recvmsg", "connect", "bind",
        "listen", "accept", "accept4", "getdents64", "fsync", "fdatasync", "readv", "writev",
        "ftruncate", "fchmod", "fchown", "flock", "getsockopt", "setsockopt", "shutdown", "openat",
        "newfstatat", "fstatat64",
    )
}
_DEFAULT_CONSUMERS.update({"mmap": (4,), "mmap2": (4,), "sendfile": (0, 1), "epoll_ctl": (0, 2)})

_TOKEN = re.compile(r"[0-9A-Za-z]+")
_NUMERIC_TOKEN = re.compile(r"(?:\d+|0x[0-9a-fA-F]+)\Z")
_FD_LIST = re.compile(r"\d+")


@dataclass(frozen=True)
class DependenceRuleSet:
    """The dependence functions, as data.

    ``fd_consumers`` maps a syscall to the argument positions that take a file
    descriptor. ``alias_rules`` maps dup-family calls to their source-fd
    argument. ``fd_array_producers`` covers calls such as ``pipe`` that return
    descriptors through an array argument instead of the return value.
    """

    fd_producers: frozenset[str] = frozenset(
        {"open", "openat", "socket", "dup", "dup2", "dup3", "accept", "accept4", "pipe", "pipe2", "memfd_create"}
    )
    fd_consumers: Mapping[str, tuple[int, ...]] = field(default_factory=lambda: dict(_DEFAULT_CONSUMERS))
    fd_array_producers: Mapping[str, int] = field(default_factory=lambda: {"pipe": 0, "pipe2": 0, "socketpair": 3})
    fd_closers: Mapping[str, int] = field(default_factory=lambda: {"close": 0})
    alias_rules: Mapping[str, int] = field(default_factory=lambda: {"dup": 0, "dup2": 0, "dup3": 0})
    mmap_producers: frozenset[str] = frozenset({"mmap", "mmap2"})
    mmap_consumers: Mapping[str, int] = field(default_factory=lambda: {"munmap": 0, "msync": 0})
    mmap_releasers: frozenset[str] = frozenset({"munmap"})
    value_match_enabled: bool = True
    value_match_min_length: int = 6
    producer_outparam_syscalls: frozenset[str] = frozenset({"gettimeofday", "clock_gettime", "fstat", "stat"})

    def __post_init__(self) -> None:
        for name, indices in self.fd_consumers.items():
            arity = SYSCALL_ARITY.get(name)
            for idx in indices:
                if idx < 0 or (arity is not None and idx >= arity):
                    raise SchemaError(f"fd consumer {name} arg {idx} is outside its arity {arity}")
        for table in (self.alias_rules, self.mmap_consumers, self.fd_closers, self.fd_array_producers):
            for name, idx in table.items():
                arity = SYSCALL_ARITY.get(name)
                if idx < 0 or (arity is not None and idx >= arity):
                    raise SchemaError(f"rule for {name} arg {idx} is outside its arity {arity}")
        if self.value_match_min_length < 1:
            raise SchemaError("value_match_min_length must be positive")

    def to_dict(self) -> dict:
        return {
            "fd_producers": sorted(self.fd_producers),
            "fd_consumers": {k: list(v) for k, v in sorted(self.fd_consumers.items())},
            "fd_array_producers": dict(sorted(self.fd_array_producers.items())),
            "fd_closers": dict(sorted(self.fd_closers.items())),
            "alias_rules": dict(sorted(self.alias_rules.items())),
            "mmap_producers": sorted(self.mmap_producers),
            "mmap_consumers": dict(sorted(self.mmap_consumers.items())),
            "mmap_releasers": sorted(self.mmap_releasers),
            "value_match_enabled": self.value_match_enabled,
            "value_match_min_length": self.value_match_min_length,
            "producer_outparam_syscalls": sorted(self.producer_outparam_syscalls),
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> DependenceRuleSet:
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise SchemaError(f"unknown dependence rule keys: {sorted(unknown)}")
        kwargs: dict = {}
        for key, value in data.items():
            if key in ("fd_producers", "mmap_producers", "mmap_releasers", "producer_outparam_syscalls"):
                kwargs[key] = frozenset(value)
            elif key == "fd_consumers":
                kwargs[key] = {k: (v,) if isinstance(v, int) else tuple(v) for k, v in value.items()}
            elif key in ("fd_array_producers", "fd_closers", "alias_rules", "mmap_consumers"):
                kwargs[key] = {k: int(v) for k, v in value.items()}
            else:
                kwargs[key] = value
        return cls(**kwargs)


@dataclass(frozen=True, order=True, slots=True)
class DependenceEdge:
    from_event: int
    to_event: int
    to_arg_index: int
    kind: str
    value: str


def _fd_arg(event: SyscallEvent, index: int) -> int | None:
    if index < len(event.args):
        raw = event.args[index].raw
        if raw.isdigit():
            return int(raw)
    return None


def _address(raw: str) -> int | None:
    head = raw.split(None, 1)[0] if raw else ""
    if head.startswith("0x"):
        try:
            return int(head, 16)
        except ValueError:
            return None
    return None


def produced_values(event: SyscallEvent, rules: DependenceRuleSet) -> list[str]:
    """Literal values an event hands to later calls (for value matching)."""
    min_len = rules.value_match_min_length
    values: list[str] = []
    ret = event.return_value
    if ret.kind in ("int", "pointer") and (ret.value is None or ret.value >= 0):
        head = ret.raw.split(None, 1)[0]
        if len(head) >= min_len and _NUMERIC_TOKEN.match(head):
            values.append(head)
    if event.name in rules.producer_outparam_syscalls:
        for _, raw in event.out_params:
            for tok in _TOKEN.findall(raw):
                if len(tok) >= min_len and _NUMERIC_TOKEN.match(tok):
                    values.append(tok)
    return list(dict.fromkeys(values))


def derive_dependences(session: TraceSession | Sequence[SyscallEvent], rules: DependenceRuleSet | None = None) -> list[DependenceEdge]:
    """Derive dependence edges, independently per task id.

    Edge families: fd-flow (producer of a descriptor to every later consumer
    until it is closed or produced again), fd-alias (dup-family calls link to
    the source descriptor's producer and pass it on to the new descriptor),
    mmap-address (mapping to later munmap/msync of the same address) and
    value-match (a numeric return or out-parameter token reappearing as a
    whole token in a later argument; the latest producer of a value is its
    reaching definition).
    """
    rules = rules or DependenceRuleSet()
    events = session.events if isinstance(session, TraceSession) else tuple(session)
    by_pid: dict[int, list[SyscallEvent]] = {}
    for e in events:
        by_pid.setdefault(e.pid, []).append(e)

    edges: set[DependenceEdge] = set()
    consumers = rules.fd_consumers
    aliases = rules.alias_rules
    closers = rules.fd_closers
    producers = rules.fd_producers
    array_producers = rules.fd_array_producers
    mmap_consumers = rules.mmap_consumers
    mmap_producers = rules.mmap_producers
    mmap_releasers = rules.mmap_releasers
    value_match = rules.value_match_enabled

    for pid_events in by_pid.values():
        holder: dict[int, int] = {}
        mappings: dict[int, int] = {}
        latest_value: dict[str, int] = {}
        for e in pid_events:
            eid = e.event_id
            name = e.name

            for idx in consumers.get(name, ()):
                fd = _fd_arg(e, idx)
                if fd is not None and fd in holder:
                    edges.add(DependenceEdge(holder[fd], eid, idx, "fd-flow", str(fd)))

            alias_source = None
            if name in aliases:
                idx = aliases[name]
                fd = _fd_arg(e, idx)
                if fd is not None and fd in holder:
                    alias_source = holder[fd]
                    edges.add(DependenceEdge(alias_source, eid, idx, "fd-alias", str(fd)))

            if name in closers:
                fd = _fd_arg(e, closers[name])
                if fd is not None:
                    holder.pop(fd, None)

            if (name in producers or name in aliases) and e.succeeded:
                owner = eid if alias_source is None else alias_source
                if name in array_producers:
                    arg = e.arg(array_producers[name])
                    for tok in _FD_LIST.findall(arg.raw) if arg is not None else ():
                        holder[int(tok)] = owner
                elif e.return_value.kind == "int" and e.return_value.value is not None:
                    holder[e.return_value.value] = owner

            if name in mmap_consumers:
                idx = mmap_consumers[name]
                arg = e.arg(idx)
                addr = _address(arg.raw) if arg is not None else None
                if addr is not None and addr in mappings:
                    edges.add(DependenceEdge(mappings[addr], eid, idx, "mmap-address", arg.raw))
                if addr is not None and name in mmap_releasers:
                    mappings.pop(addr, None)
            if name in mmap_producers and e.return_value.kind == "pointer":
                mappings[e.return_value.value] = eid

            if value_match:
                if latest_value:
                    for idx, arg in enumerate(e.args):
                        for tok in set(_TOKEN.findall(arg.raw)):
                            src = latest_value.get(tok)
                            if src is not None:
                                edges.add(DependenceEdge(src, eid, idx, "value-match", tok))
                for value in produced_values(e, rules):
                    latest_value[value] = eid

    return sorted(edges)


# -- graphs -----------------------------------------------------------------

@dataclass(frozen=True, slots=True)
class Node:
    node_id: int
    label: str
    attrs: tuple[tuple[str, object], ...] = ()

    def attr(self, key: str, default=None):
        for k, v in self.attrs:
            if k == key:
                return v
        return default

    @property
    def attr_dict(self) -> dict:
        return dict(self.attrs)


@dataclass(frozen=True)
class Scdg:
    graph_id: int
    nodes: tuple[Node, ...]
    edges: tuple[DependenceEdge, ...]
    span_us: tuple[int, int]
    pid: int
    node_times: tuple[int, ...] = field(default=(), compare=False, repr=False)

    def __len__(self) -> int:
        return len(self.nodes)

    @property
    def node_ids(self) -> list[int]:
        return [n.node_id for n in self.nodes]

    def labels(self) -> list[str]:
        return [n.label for n in self.nodes]


def load_normalization(path: str | None = None) -> dict[str, str]:
    if path is None:
        text = resources.files("scdgmap").joinpath("data/normalization.json").read_text(encoding="utf-8")
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    table = json.loads(text)
    if not isinstance(table, dict) or not all(isinstance(k, str) and isinstance(v, str) for k, v in table.items()):
        raise SchemaError("normalization table must be an object of name -> label strings")
    return table


_DEFAULT_NORMALIZATION: dict[str, str] | None = None


def default_normalization() -> dict[str, str]:
    global _DEFAULT_NORMALIZATION
    if _DEFAULT_NORMALIZATION is None:
        _DEFAULT_NORMALIZATION = load_normalization()
    return dict(_DEFAULT_NORMALIZATION)


@dataclass(frozen=True)
class PathClassifier:
    binder_devices: frozenset[str] = DEFAULT_BINDER_DEVICES
    ashmem_devices: frozenset[str] = DEFAULT_ASHMEM_DEVICES

    def classify(self, path: str | None) -> str:
        if not path:
            return "other"
        if path in self.binder_devices:
            return "dev-binder"
        if path in self.ashmem_devices:
            return "dev-ashmem"
        if path.startswith(("/data/data/", "/data/user/", "/data/user_de/")):
            return "app-data"
        if path.startswith(("/sdcard", "/storage/", "/mnt/sdcard", "/mnt/media_rw/", "/mnt/user/")):
            return "external-storage"
        if path.startswith(("/system", "/vendor", "/proc", "/sys/", "/dev/", "/apex/", "/odm/", "/product/")):
            return "system"
        return "other"


def literal_path(event: SyscallEvent) -> str | None:
    """First string argument that looks like an absolute path."""
    for a in event.args:
        if a.kind == "string-literal" and a.raw.startswith('"/'):
            end = a.raw.rfind('"')
            return a.raw[1:end] if end > 0 else a.raw[1:]
    return None


def event_paths(events: Sequence[SyscallEvent], edges: Iterable[DependenceEdge]) -> dict[int, str | None]:
    """Path touched by each event, following fd edges back to the opener."""
    fd_source: dict[int, int] = {}
    for edge in edges:
        if edge.kind in ("fd-flow", "fd-alias") and edge.to_event not in fd_source:
            fd_source[edge.to_event] = edge.from_event
    paths: dict[int, str | None] = {}
    for e in events:
        path = literal_path(e)
        if path is None and e.event_id in fd_source:
            path = paths.get(fd_source[e.event_id])
        paths[e.event_id] = path
    return paths


def _components(ids: list[int], edges: Iterable[DependenceEdge]) -> list[list[int]]:
    parent = {i: i for i in ids}

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for edge in edges:
        a, b = find(edge.from_event), find(edge.to_event)
        if a != b:
            if a < b:
                parent[b] = a
            else:
                parent[a] = b
    groups: dict[int, list[int]] = {}
    for i in ids:
        groups.setdefault(find(i), []).append(i)
    return list(groups.values())


def build_scdgs(
    session: TraceSession,
    rules: DependenceRuleSet | None = None,
    normalization: Mapping[str, str] | None = None,
    classifier: PathClassifier | None = None,
    edges: Sequence[DependenceEdge] | None = None,
) -> list[Scdg]:
    """Split a session into weakly connected SCDGs ordered by first timestamp."""
    rules = rules or DependenceRuleSet()
    table = default_normalization() if normalization is None else normalization
    classifier = classifier or PathClassifier()
    if edges is None:
        edges = derive_dependences(session, rules)
    events = session.events
    by_id = {e.event_id: e for e in events}
    paths = event_paths(events, edges)

    edges_by_root: dict[int, list[DependenceEdge]] = {}
    comps = _components([e.event_id for e in events], edges)
    root_of: dict[int, int] = {}
    for comp in comps:
        for i in comp:
            root_of[i] = comp[0]
    for edge in edges:
        edges_by_root.setdefault(root_of[edge.from_event], []).append(edge)

    drafts = []
    for comp in comps:
        members = sorted(comp)
        times = [by_id[i].timestamp_us for i in members]
        drafts.append((min(times), members[0], members, times))
    drafts.sort(key=lambda d: (d[0], d[1]))

    graphs: list[Scdg] = []
    for graph_id, (_, _, members, times) in enumerate(drafts):
        nodes = []
        for i in members:
            e = by_id[i]
            attrs = (("path_class", classifier.classify(paths[i])), ("success", e.return_value.kind != "error"))
            nodes.append(Node(i, table.get(e.name, e.name), attrs))
        graphs.append(
            Scdg(
                graph_id=graph_id,
                nodes=tuple(nodes),
                edges=tuple(sorted(edges_by_root.get(root_of[members[0]], ()))),
                span_us=(min(times), max(times)),
                pid=by_id[members[0]].pid,
                node_times=tuple(times),
            )
        )
    return graphs


# -- export / import --------------------------------------------------------

def graph_to_dict(g: Scdg) -> dict:
    return {
        "graph_id": g.graph_id,
        "pid": g.pid,
        "span_us": [g.span_us[0], g.span_us[1]],
        "nodes": [
            {"id": n.node_id, "label": n.label, "attrs": dict(n.attrs), "t_us": t}
            for n, t in zip(g.nodes, g.node_times or [None] * len(g.nodes))
        ],
        "edges": [
            {"from": e.from_event, "to": e.to_event, "arg": e.to_arg_index, "kind": e.kind, "value": e.value}
            for e in g.edges
        ],
    }


def graph_from_dict(d: Mapping) -> Scdg:
    try:
        nodes = tuple(
            Node(int(n["id"]), str(n["label"]), tuple(sorted(n.get("attrs", {}).items())))
            for n in d["nodes"]
        )
        times = tuple(n["t_us"] for n in d["nodes"] if n.get("t_us") is not None)
        edges = tuple(
            DependenceEdge(int(e["from"]), int(e["to"]), int(e["arg"]), str(e["kind"]), str(e["value"]))
            for e in d["edges"]
        )
        span = d["span_us"]
        g = Scdg(int(d["graph_id"]), nodes, edges, (int(span[0]), int(span[1])), int(d["pid"]),
                 times if len(times) == len(nodes) else ())
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"invalid graph JSON: {exc}") from None
    ids = {n.node_id for n in nodes}
    for e in edges:
        if e.kind not in EDGE_KINDS:
            raise SchemaError(f"unknown edge kind {e.kind!r}")
        if e.from_event not in ids or e.to_event not in ids:
            raise SchemaError(f"edge {e.from_event}->{e.to_event} references a non-member node")
    return g


def _dot_quote(text: str) -> str:
    return '"' + text.replace("\\", "\\\\").replace('"', '\\"') + '"'


def export_graph(g: Scdg, format: str = "json") -> str:
    if format == "json":
        return json.dumps({"schema_version": SCHEMA_VERSION, **graph_to_dict(g)}, sort_keys=True, indent=2) + "\n"
    if format == "dot":
        lines = [f"digraph scdg_{g.graph_id} {{", f"  // pid={g.pid} span_us={g.span_us[0]}..{g.span_us[1]}"]
        for n in g.nodes:
            lines.append(f"  n{n.node_id} [label={_dot_quote(f'{n.label}@{n.node_id}')}];")
        for e in g.edges:
            lines.append(f"  n{e.from_event} -> n{e.to_event} [label={_dot_quote(e.kind)}];")
        lines.append("}")
        return "\n".join(lines) + "\n"
    raise ValueError(f"unsupported export format {format!r}")


def import_graph(text: str) -> Scdg:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"graph JSON does not parse: {exc}") from None
    return graph_from_dict(data)


def graphs_document(graphs: Sequence[Scdg]) -> dict:
    return {"schema_version": SCHEMA_VERSION, "graphs": [graph_to_dict(g) for g in graphs]}

"""strace trace ingestion.

Accepted input is the output of ``strace -f -ttt``: every line starts with the
task id and an epoch timestamp with a six digit microsecond fraction::

    1234 1553102851.123456 openat(AT_FDCWD, "/sdcard/a.jpg", O_RDONLY) = 5
    1234 1553102851.200000 read(5,  <unfinished ...>
    1234 1553102851.200410 <... read resumed> "abc", 64) = 3
    1234 1553102851.300000 --- SIGCHLD {si_signo=SIGCHLD, ...} ---
    1234 1553102851.400000 +++ exited with 0 +++

Other timestamp styles (``-t``, ``-tt``, ``-r``) are rejected.
"""
from __future__ import annotations

import json
import re
from collections import deque
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Iterator, Mapping

from ._kernels import scan_args
from .errors import MalformedLine, UnpairedResumption

DEFAULT_NOISE = frozenset(
    {"futex", "sched_yield", "rt_sigprocmask", "rt_sigreturn", "restart_syscall", "getpid", "gettid"}
)
DEFAULT_OUTPARAM_SYSCALLS = frozenset({"gettimeofday", "clock_gettime", "fstat", "stat"})

ARG_KINDS = ("integer", "string-literal", "flag-set", "struct-dump", "pointer-token", "symbolic-constant")

_PREFIX = re.compile(r"(\d+)[ \t]+(\S+)[ \t]+")
_TIMESTAMP = re.compile(r"(\d+)\.(\d{6})\Z")
_NAME = re.compile(r"([A-Za-z_][A-Za-z0-9_]*)\(")
_RESUMED = re.compile(r"<\.\.\. ([A-Za-z_][A-Za-z0-9_]*) resumed>")
_UNFINISHED = re.compile(r"\s*<unfinished \.\.\.(?: exit status -?\d+)?>\s*\Z")
_RET_TAIL = re.compile(r"[ \t]+=[ \t]+(\S.*?)\s*\Z")
_ERROR_RET = re.compile(r"-1 (E[A-Z0-9]+)\b")
_INT = re.compile(r"-?\d+\Z")
_HEX = re.compile(r"0x[0-9a-fA-F]+\Z")


@dataclass(frozen=True, slots=True)
class ArgValue:
    raw: str
    kind: str

    @property
    def int_value(self) -> int | None:
        if self.kind == "integer":
            return int(self.raw, 8) if self.raw.startswith("0") and len(self.raw) > 1 else int(self.raw)
        return None


@lru_cache(maxsize=1 << 16)
def classify_arg(raw: str) -> ArgValue:
    if not raw:
        kind = "symbolic-constant"
    elif raw[0] == '"':
        kind = "string-literal"
    elif raw[0] in "{[" or raw.startswith("~["):
        kind = "struct-dump"
    elif _INT.match(raw):
        kind = "integer"
    elif _HEX.match(raw) or raw == "NULL":
        kind = "pointer-token"
    elif "|" in raw:
        kind = "flag-set"
    else:
        kind = "symbolic-constant"
    return ArgValue(raw, kind)


@dataclass(frozen=True, slots=True)
class ReturnValue:
    """A syscall result as printed after ``=``.

    ``kind`` is ``int``, ``pointer``, ``error`` or ``unknown``. ``raw`` keeps
    the full text including any trailing explanation so lines re-serialize
    exactly.
    """

    raw: str
    kind: str
    value: int | None = None
    errno: str | None = None

    @property
    def is_error(self) -> bool:
        return self.kind == "error"


UNKNOWN_RETURN = ReturnValue("?", "unknown")


@lru_cache(maxsize=1 << 14)
def parse_return(text: str) -> ReturnValue:
    m = _ERROR_RET.match(text)
    if m:
        return ReturnValue(text, "error", -1, m.group(1))
    head = text.split(None, 1)[0]
    if _INT.match(head):
        return ReturnValue(text, "int", int(head))
    if _HEX.match(head):
        return ReturnValue(text, "pointer", int(head, 16))
    return ReturnValue(text, "unknown")


@dataclass(frozen=True, slots=True)
class SyscallEvent:
    event_id: int
    pid: int
    tid: int
    timestamp_us: int
    name: str
    args: tuple[ArgValue, ...]
    return_value: ReturnValue
    out_params: tuple[tuple[int, str], ...] = ()
    source_line: int = field(default=0, compare=False)

    @property
    def succeeded(self) -> bool:
        ret = self.return_value
        return ret.kind == "pointer" or (ret.kind == "int" and ret.value >= 0)

    def arg(self, index: int) -> ArgValue | None:
        return self.args[index] if 0 <= index < len(self.args) else None


@dataclass(frozen=True, slots=True)
class Unfinished:
    pid: int
    tid: int
    timestamp_us: int
    name: str
    args: tuple[ArgValue, ...]
    position: int = 0


@dataclass(frozen=True, slots=True)
class Resumed:
    pid: int
    tid: int
    timestamp_us: int
    name: str
    args: tuple[ArgValue, ...]
    return_value: ReturnValue
    position: int = 0


Continuation = Unfinished | Resumed


@dataclass(frozen=True, slots=True)
class Skip:
    kind: str  # "signal" or "exit"
    text: str


@dataclass(frozen=True)
class ParseConfig:
    noise: frozenset[str] = DEFAULT_NOISE
    outparam_syscalls: frozenset[str] = DEFAULT_OUTPARAM_SYSCALLS
    pid_package_map: Mapping[int, str] = field(default_factory=dict)


@dataclass(frozen=True)
class TraceSession:
    events: tuple[SyscallEvent, ...]
    source_path: str
    filtered_count: int
    skipped_count: int = 0
    merged_pair_count: int = 0
    physical_line_count: int = 0
    pid_package_map: Mapping[int, str] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.events)

    def pids(self) -> list[int]:
        return sorted({e.pid for e in self.events})


def _out_params(name: str, args: tuple[ArgValue, ...], config: ParseConfig) -> tuple[tuple[int, str], ...]:
    if name not in config.outparam_syscalls:
        return ()
    return tuple((i, a.raw) for i, a in enumerate(args) if a.kind == "struct-dump")


def parse_strace_line(
    line: str, base_config: ParseConfig | None = None, position: int = 0
) -> SyscallEvent | Continuation | Skip:
    """Parse one physical trace line.

    Returns a complete ``SyscallEvent`` (with ``event_id`` 0), an
    ``Unfinished``/``Resumed`` half, or ``Skip`` for signal and exit lines.
    Raises ``MalformedLine`` for anything outside the accepted grammar.
    """
    config = base_config or ParseConfig()
    line = line.rstrip("\r\n")
    m = _PREFIX.match(line)
    if m is None:
        raise MalformedLine(position, "expected '<pid> <epoch.micros> ...' prefix", text=line)
    ts = _TIMESTAMP.match(m.group(2))
    if ts is None:
        raise MalformedLine(
            position, f"unsupported timestamp {m.group(2)!r}; traces must use strace -f -ttt", text=line
        )
    pid = int(m.group(1))
    t_us = int(ts.group(1)) * 1_000_000 + int(ts.group(2))
    rest = line[m.end():]

    if rest.startswith("---"):
        if rest.rstrip().endswith("---"):
            return Skip("signal", rest)
        raise MalformedLine(position, "unterminated signal line", text=line)
    if rest.startswith("+++"):
        if rest.rstrip().endswith("+++"):
            return Skip("exit", rest)
        raise MalformedLine(position, "unterminated exit line", text=line)

    r = _RESUMED.match(rest)
    if r is not None:
        name = r.group(1)
        raw_args, close = scan_args(rest, r.end())
        if close < 0:
            raise MalformedLine(position, f"resumed {name} has no closing parenthesis", text=line)
        tail = _RET_TAIL.match(rest, close + 1)
        if tail is None:
            raise MalformedLine(position, f"resumed {name} has no return value", text=line)
        args = tuple(classify_arg(a) for a in raw_args if a)
        return Resumed(pid, pid, t_us, name, args, parse_return(tail.group(1)), position)

    n = _NAME.match(rest)
    if n is None:
        raise MalformedLine(position, "expected a syscall name followed by '('", text=line)
    name = n.group(1)
    u = _UNFINISHED.search(rest)
    if u is not None:
        raw_args, close = scan_args(rest[: u.start()], n.end())
        if close >= 0:
            raise MalformedLine(position, f"unfinished {name} already closed its argument list", text=line)
        args = tuple(classify_arg(a) for a in raw_args if a)
        return Unfinished(pid, pid, t_us, name, args, position)

    raw_args, close = scan_args(rest, n.end())
    if close < 0:
        raise MalformedLine(position, f"{name} has no closing parenthesis", text=line)
    tail = _RET_TAIL.match(rest, close + 1)
    if tail is None:
        raise MalformedLine(position, f"{name} has no return value", text=line)
    args = tuple(classify_arg(a) for a in raw_args)
    return SyscallEvent(
        0, pid, pid, t_us, name, args, parse_return(tail.group(1)), _out_params(name, args, config), position
    )


def format_strace_line(event: SyscallEvent) -> str:
    """Serialize an event back into the accepted strace grammar."""
    secs, micros = divmod(event.timestamp_us, 1_000_000)
    args = ", ".join(a.raw for a in event.args)
    return f"{event.pid} {secs}.{micros:06d} {event.name}({args}) = {event.return_value.raw}"


def parse_lines(
    lines: Iterable[str], config: ParseConfig | None = None, source_path: str = "<memory>"
) -> TraceSession:
    config = config or ParseConfig()
    pending: dict[tuple[int, int, str], deque[Unfinished]] = {}
    completed: list[SyscallEvent] = []
    skipped = merged = physical = 0

    for position, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        physical += 1
        try:
            item = parse_strace_line(line, config, position)
        except MalformedLine as exc:
            raise MalformedLine(position, exc.reason, source_path, exc.text) from None
        if type(item) is SyscallEvent:
            completed.append(item)
        elif type(item) is Unfinished:
            pending.setdefault((item.pid, item.tid, item.name), deque()).append(item)
        elif type(item) is Resumed:
            queue = pending.get((item.pid, item.tid, item.name))
            if not queue:
                raise UnpairedResumption(position, item.name, source_path)
            head = queue.popleft()
            args = head.args + item.args
            completed.append(
                SyscallEvent(
                    0, head.pid, head.tid, head.timestamp_us, head.name, args,
                    item.return_value, _out_params(head.name, args, config), head.position,
                )
            )
            merged += 1
        else:
            skipped += 1

    # calls still unfinished at end of trace (task killed mid-call)
    for queue in pending.values():
        for head in queue:
            completed.append(
                SyscallEvent(
                    0, head.pid, head.tid, head.timestamp_us, head.name, head.args,
                    UNKNOWN_RETURN, _out_params(head.name, head.args, config), head.position,
                )
            )

    completed.sort(key=lambda e: (e.timestamp_us, e.source_line))
    noise = config.noise
    kept = [e for e in completed if e.name not in noise]
    events = tuple(replace(e, event_id=i) for i, e in enumerate(kept))
    return TraceSession(
        events=events,
        source_path=source_path,
        filtered_count=len(completed) - len(kept),
        skipped_count=skipped,
        merged_pair_count=merged,
        physical_line_count=physical,
        pid_package_map=dict(config.pid_package_map),
    )


def load_trace(path: str | Path, config: ParseConfig | None = None) -> TraceSession:
    path = Path(path)
    with path.open(encoding="utf-8", errors="surrogateescape") as fh:
        return parse_lines(fh, config, str(path))


def event_to_dict(event: SyscallEvent) -> dict:
    ret = event.return_value
    return {
        "event_id": event.event_id,
        "pid": event.pid,
        "tid": event.tid,
        "t_us": event.timestamp_us,
        "name": event.name,
        "args": [{"raw": a.raw, "kind": a.kind} for a in event.args],
        "ret": {"raw": ret.raw, "kind": ret.kind, "value": ret.value, "errno": ret.errno},
        "out_params": [[i, v] for i, v in event.out_params],
    }


def event_from_dict(d: Mapping) -> SyscallEvent:
    ret = d["ret"]
    return SyscallEvent(
        event_id=d["event_id"],
        pid=d["pid"],
        tid=d["tid"],
        timestamp_us=d["t_us"],
        name=d["name"],
        args=tuple(ArgValue(a["raw"], a["kind"]) for a in d["args"]),
        return_value=ReturnValue(ret["raw"], ret["kind"], ret.get("value"), ret.get("errno")),
        out_params=tuple((int(i), v) for i, v in d.get("out_params", [])),
    )


def iter_event_jsonl(session: TraceSession) -> Iterator[str]:
    for event in session.events:
        yield json.dumps(event_to_dict(event), sort_keys=True, separators=(",", ":"))

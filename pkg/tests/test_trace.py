from __future__ import annotations

import pytest

from scdgmap.errors import MalformedLine, UnpairedResumption
from scdgmap.trace import (
    ParseConfig,
    Resumed,
    Skip,
    SyscallEvent,
    Unfinished,
    event_from_dict,
    event_to_dict,
    format_strace_line,
    load_trace,
    parse_lines,
    parse_strace_line,
)

from conftest import CAMERA, FIXTURES
from oracles import classify_lines


def test_complete_line():
    e = parse_strace_line('1234 1553102851.123456 openat(AT_FDCWD, "/sdcard/DCIM/i.jpg", O_WRONLY|O_CREAT, 0644) = 5')
    assert isinstance(e, SyscallEvent)
    assert (e.pid, e.tid, e.name) == (1234, 1234, "openat")
    assert e.timestamp_us == 1553102851123456
    assert e.args[1].raw == '"/sdcard/DCIM/i.jpg"'
    assert [a.kind for a in e.args] == ["symbolic-constant", "string-literal", "flag-set", "integer"]
    assert e.return_value.kind == "int" and e.return_value.value == 5


def test_unfinished_line():
    item = parse_strace_line("1234 1553102851.200000 read(5,  <unfinished ...>")
    assert isinstance(item, Unfinished)
    assert (item.pid, item.name) == (1234, "read")
    assert [a.raw for a in item.args] == ["5"]


def test_error_return():
    e = parse_strace_line('1234 1553102851.300000 open("/x", O_RDONLY) = -1 ENOENT (No such file or directory)')
    assert e.return_value.is_error and e.return_value.errno == "ENOENT"
    assert not e.succeeded


def test_pointer_and_unknown_returns():
    e = parse_strace_line("7 1.000000 mmap(NULL, 4096, PROT_READ, MAP_SHARED, 3, 0) = 0x7f0000a000")
    assert e.return_value.kind == "pointer" and e.return_value.value == 0x7f0000a000
    e = parse_strace_line("7 1.000000 exit_group(0) = ?")
    assert e.return_value.kind == "unknown"


def test_nested_args_are_kept_whole():
    e = parse_strace_line(
        '7 1.000000 ioctl(3, BINDER_WRITE_READ, {write_buffer=[BC_TRANSACTION {target.handle=camera, '
        'code=1}], read_buffer="a,b)"}) = 0'
    )
    assert len(e.args) == 3
    assert e.args[2].kind == "struct-dump"
    assert e.args[2].raw.endswith('"a,b)"}')


def test_signal_and_exit_lines_skip():
    assert parse_strace_line("7 1.000000 --- SIGCHLD {si_signo=SIGCHLD} ---") == Skip(
        "signal", "--- SIGCHLD {si_signo=SIGCHLD} ---")
    assert parse_strace_line("7 1.000000 +++ exited with 0 +++").kind == "exit"


def test_resumed_half():
    item = parse_strace_line('1234 1553102851.200410 <... read resumed> "abc", 64) = 3')
    assert isinstance(item, Resumed)
    assert [a.raw for a in item.args] == ['"abc"', "64"]


@pytest.mark.parametrize("line", [
    "1234 08:12:01.123456 read(5, \"\", 1) = 0",  # -tt
    "1234 1553102851 read(5, \"\", 1) = 0",  # -t
    "1234 1553102851.123 read(5, \"\", 1) = 0",  # millisecond fraction
    "read(5, \"\", 1) = 0",  # no pid column
    "1234 1553102851.123456 read(5, \"\", 1",  # unterminated
    "1234 1553102851.123456 read(5)",  # no return
])
def test_malformed_lines_are_rejected(line):
    with pytest.raises(MalformedLine):
        parse_strace_line(line)


def test_merge_unfinished_and_resumed():
    s = parse_lines([
        "1234 1553102851.200000 read(5,  <unfinished ...>",
        '1234 1553102851.200410 <... read resumed> "abc", 64) = 3',
    ])
    assert len(s.events) == 1
    e = s.events[0]
    assert [a.raw for a in e.args] == ["5", '"abc"', "64"]
    assert e.return_value.value == 3
    assert e.timestamp_us == 1553102851200000
    assert s.merged_pair_count == 1


def test_interleaved_merges_pair_per_task():
    s = parse_lines([
        "1 1.000000 read(5,  <unfinished ...>",
        "2 1.000001 read(6,  <unfinished ...>",
        '2 1.000002 <... read resumed> "b", 1) = 1',
        '1 1.000003 <... read resumed> "a", 1) = 1',
    ])
    assert {(e.pid, e.args[0].raw, e.args[1].raw) for e in s.events} == {(1, "5", '"a"'), (2, "6", '"b"')}


def test_unpaired_resumption_names_line():
    with pytest.raises(UnpairedResumption) as info:
        parse_lines(["1 1.000000 open(\"/a\", O_RDONLY) = 3", '1 1.000001 <... read resumed> "a", 1) = 1'], source_path="t.strace")
    assert "t.strace:2" in str(info.value)


def test_unfinished_at_end_of_trace_is_kept():
    s = parse_lines(["1 1.000000 epoll_pwait(7,  <unfinished ...>"])
    assert len(s.events) == 1 and s.events[0].return_value.kind == "unknown"


def test_noise_filter_counts():
    lines = [f"1 1.00000{i} futex(0x1, FUTEX_WAKE, 1) = 0" for i in range(4)]
    lines += ['1 1.000005 open("/a", O_RDONLY) = 3', '1 1.000006 open("/b", O_RDONLY) = 4']
    s = parse_lines(lines)
    assert len(s.events) == 2 and s.filtered_count == 4


def test_noise_list_is_configurable():
    lines = ["1 1.000000 futex(0x1, FUTEX_WAKE, 1) = 0", "1 1.000001 close(3) = 0"]
    s = parse_lines(lines, ParseConfig(noise=frozenset({"close"})))
    assert [e.name for e in s.events] == ["futex"]


def test_outparams_only_for_designated_calls():
    cfg = ParseConfig()
    e = parse_strace_line("1 1.000000 gettimeofday({tv_sec=1553102851, tv_usec=5}, NULL) = 0", cfg)
    assert e.out_params == ((0, "{tv_sec=1553102851, tv_usec=5}"),)
    e = parse_strace_line("1 1.000000 rt_sigaction(SIGINT, {sa_handler=0x1}, NULL, 8) = 0", cfg)
    assert e.out_params == ()


def test_event_ids_follow_time_order():
    s = parse_lines(["1 2.000000 close(4) = 0", "2 1.000000 close(3) = 0"])
    assert [(e.event_id, e.pid) for e in s.events] == [(0, 2), (1, 1)]


def test_camera_fixture_counts():
    s = load_trace(CAMERA / "camera.strace")
    assert len(s) + s.filtered_count + s.skipped_count + s.merged_pair_count == s.physical_line_count
    assert s.merged_pair_count == 2 and s.skipped_count == 2


def test_ten_thousand_line_fixture_against_classifier():
    path = FIXTURES / "synthetic_10k.strace"
    lines = path.read_text().splitlines()
    assert len(lines) == 10_000
    s = load_trace(path)
    expected = classify_lines(lines, ParseConfig().noise)
    assert len(s.events) == expected["events"]
    assert s.filtered_count == expected["noise"]
    assert s.merged_pair_count == expected["resumed"]
    assert s.skipped_count == expected["signal"] + expected["exit"]


def test_format_round_trip_on_fixture():
    s = load_trace(CAMERA / "camera.strace")
    for e in s.events:
        if e.return_value.kind == "unknown":
            continue
        again = parse_strace_line(format_strace_line(e))
        assert again == e.__class__(0, e.pid, e.tid, e.timestamp_us, e.name, e.args, e.return_value, e.out_params)


def test_json_round_trip():
    s = load_trace(CAMERA / "camera.strace")
    for e in s.events:
        assert event_from_dict(event_to_dict(e)) == e
    assert set(event_to_dict(s.events[0])) == {"event_id", "pid", "tid", "t_us", "name", "args", "ret", "out_params"}

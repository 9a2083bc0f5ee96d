from __future__ import annotations

import json

import pytest

from scdgmap.errors import SchemaError
from scdgmap.ipc import ServiceMap, Unresolved, extract_ipc, load_service_map
from scdgmap.scdg import build_scdgs, derive_dependences
from scdgmap.trace import load_trace, parse_lines

from conftest import CAMERA


def _run(lines, service_map=None):
    s = parse_lines(lines)
    return s, extract_ipc(build_scdgs(s), s, service_map)


def test_binder_ioctl_is_an_interaction():
    _, ipc = _run(['1 1.000000 open("/dev/binder", O_RDWR) = 7', "1 1.000001 ioctl(7, BINDER_WRITE_READ, 0x7ffc) = 0"])
    (i,) = ipc
    assert (i.mechanism, i.request, i.caller_pid, i.device) == ("binder", "BINDER_WRITE_READ", 1, "/dev/binder")
    assert i.callee == Unresolved(None) and not i.resolved


def test_ioctl_without_producer_gives_diagnostic():
    _, ipc = _run(["1 1.000000 ioctl(7, BINDER_WRITE_READ, 0x7ffc) = 0"])
    assert len(ipc) == 0 and len(ipc.diagnostics) == 1


def test_non_ipc_device_is_ignored():
    _, ipc = _run(['1 1.000000 open("/dev/input0", O_RDWR) = 7', "1 1.000001 ioctl(7, EVIOCGNAME, 0x7ffc) = 0"])
    assert len(ipc) == 0 and ipc.diagnostics == []


def test_dup_of_binder_fd_still_resolves():
    _, ipc = _run(['1 1.000000 open("/dev/hwbinder", O_RDWR) = 7', "1 1.000001 dup(7) = 9",
                   "1 1.000002 ioctl(9, BINDER_WRITE_READ, {handle=audio}) = 0"],
                  ServiceMap({"/dev/hwbinder#handle:audio": "audioserver"}))
    assert [i.callee for i in ipc] == ["audioserver"]


def test_handle_token_without_map_entry():
    _, ipc = _run(['1 1.000000 open("/dev/binder", O_RDWR) = 7', "1 1.000001 ioctl(7, BINDER_WRITE_READ, {target.handle=gps}) = 0"])
    assert str(ipc[0].callee) == "unresolved:gps"


def test_service_map_lookup_order():
    m = ServiceMap({"/dev/binder#handle:camera": "media.camera", "handle:camera": "generic", "/dev/*binder": "sm"})
    assert m.resolve("/dev/binder", "camera") == "media.camera"
    assert m.resolve("/dev/vndbinder", "camera") == "generic"
    assert m.resolve("/dev/vndbinder", None) == "sm"
    assert m.resolve("/dev/ashmem", None) is None


def test_service_map_rejects_duplicates(tmp_path):
    p = tmp_path / "m.json"
    p.write_text('{"handle:a": "x", "handle:a": "y"}')
    with pytest.raises(SchemaError):
        load_service_map(p)


def test_camera_fixture_interactions():
    s = load_trace(CAMERA / "camera.strace")
    graphs = build_scdgs(s)
    ipc = extract_ipc(graphs, s, load_service_map(CAMERA / "service_map.json"))
    binder = [i for i in ipc if i.mechanism == "binder"]
    # hand count: 5 ioctls on the main thread's /dev/binder fd
    assert len(binder) == 5
    assert [i.callee for i in binder if i.request == "BINDER_WRITE_READ"] == ["media.camera"] * 3
    ashmem = [i for i in ipc if i.mechanism == "ashmem"]
    assert [i.request for i in ashmem] == ["ASHMEM_SET_NAME", "ASHMEM_SET_SIZE", "mmap"]
    # the worker thread's ioctl reuses an fd opened by another task
    assert len(ipc.diagnostics) == 1 and "pid 1241" in ipc.diagnostics[0]


def test_soundness_binder_traces_to_device_open():
    s = load_trace(CAMERA / "camera.strace")
    graphs = build_scdgs(s)
    by_id = {e.event_id: e for e in s.events}
    fd_src = {(e.to_event, e.to_arg_index): e.from_event for e in derive_dependences(s) if e.kind == "fd-flow"}
    for i in extract_ipc(graphs, s):
        if i.mechanism == "binder":
            src = fd_src[(i.event_id, 0)]
            assert '"/dev/binder"' in by_id[src].args[1].raw
            assert i.caller_pid == by_id[i.event_id].pid


def test_to_dict_is_json():
    _, ipc = _run(['1 1.000000 open("/dev/binder", O_RDWR) = 7', "1 1.000001 ioctl(7, BINDER_VERSION, {}) = 0"])
    json.dumps(ipc[0].to_dict())

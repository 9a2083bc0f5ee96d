from __future__ import annotations

import json
import random

import pytest

from scdgmap.errors import SchemaError
from scdgmap.scdg import (
    DependenceEdge,
    DependenceRuleSet,
    PathClassifier,
    build_scdgs,
    derive_dependences,
    export_graph,
    graph_from_dict,
    graph_to_dict,
    import_graph,
)
from scdgmap.trace import load_trace, parse_lines

from conftest import CAMERA
from oracles import brute_force_dependences
from synth import synthetic_trace


def _session(*bodies: str, pid: int = 1):
    return parse_lines(f"{pid} 1.{i:06d} {b}" for i, b in enumerate(bodies))


def _edges(session, **rules):
    return {(e.from_event, e.to_event, e.to_arg_index, e.kind) for e in
            derive_dependences(session, DependenceRuleSet(**rules))}


def test_fd_lifetime():
    s = _session('open("/a", O_RDONLY) = 5', 'read(5, "abc", 3) = 3', "close(5) = 0")
    assert _edges(s) == {(0, 1, 0, "fd-flow"), (0, 2, 0, "fd-flow")}


def test_fd_reuse_after_close():
    s = _session('open("/a", O_RDONLY) = 5', "close(5) = 0", 'open("/b", O_RDONLY) = 5', 'read(5, "", 1) = 0')
    edges = _edges(s)
    assert (2, 3, 0, "fd-flow") in edges
    assert (0, 3, 0, "fd-flow") not in edges


def test_consumers_do_not_chain():
    s = _session('open("/a", O_RDWR) = 5', 'read(5, "", 1) = 0', 'write(5, "x", 1) = 1')
    assert _edges(s) == {(0, 1, 0, "fd-flow"), (0, 2, 0, "fd-flow")}


def test_failed_open_produces_nothing():
    s = _session('open("/a", O_RDONLY) = -1 ENOENT (No such file or directory)', 'read(3, "", 1) = 0')
    assert _edges(s) == set()


def test_dup_alias():
    s = _session('open("/a", O_RDONLY) = 3', "dup(3) = 7", 'read(7, "", 1) = 0')
    assert _edges(s) == {(0, 1, 0, "fd-alias"), (0, 2, 0, "fd-flow")}


def test_pipe_array_producer_and_mmap_fd_position():
    s = _session("pipe2([3, 4], O_CLOEXEC) = 0", 'write(4, "x", 1) = 1',
                 "mmap(NULL, 4096, PROT_READ, MAP_SHARED, 3, 0) = 0x7f0000a000")
    assert _edges(s) == {(0, 1, 0, "fd-flow"), (0, 2, 4, "fd-flow")}


def test_mmap_address_until_unmapped():
    s = _session("mmap(NULL, 4096, PROT_READ, MAP_PRIVATE|MAP_ANONYMOUS, -1, 0) = 0x7f0000a000",
                 "msync(0x7f0000a000, 4096, MS_SYNC) = 0", "munmap(0x7f0000a000, 4096) = 0",
                 "msync(0x7f0000a000, 4096, MS_SYNC) = 0")
    kinds = {e for e in _edges(s) if e[3] == "mmap-address"}
    assert kinds == {(0, 1, 0, "mmap-address"), (0, 2, 0, "mmap-address")}


def test_value_match_needs_whole_token_and_min_length():
    s = _session("gettimeofday({tv_sec=1553102851, tv_usec=12}, NULL) = 0",
                 'openat(AT_FDCWD, "/sdcard/IMG_1553102851.jpg", O_WRONLY) = 3',
                 'write(3, "x15531028510", 1) = 1',
                 'write(3, "12", 1) = 1')
    vm = {e for e in _edges(s) if e[3] == "value-match"}
    assert vm == {(0, 1, 1, "value-match")}
    assert not {e for e in _edges(s, value_match_enabled=False) if e[3] == "value-match"}


def test_tasks_are_independent():
    s = parse_lines(['1 1.000000 open("/a", O_RDONLY) = 5', '2 1.000001 read(5, "", 1) = 0'])
    assert derive_dependences(s) == []


def test_rule_validation_and_round_trip():
    with pytest.raises(SchemaError):
        DependenceRuleSet(fd_consumers={"close": (3,)})
    rules = DependenceRuleSet(value_match_min_length=8)
    assert DependenceRuleSet.from_dict(json.loads(json.dumps(rules.to_dict()))) == rules
    with pytest.raises(SchemaError):
        DependenceRuleSet.from_dict({"bogus": 1})


def test_camera_fixture_matches_brute_force():
    s = load_trace(CAMERA / "camera.strace")
    assert set(derive_dependences(s)) == brute_force_dependences(s.events)


@pytest.mark.parametrize("seed", range(20))
def test_random_sessions_match_brute_force(seed):
    s = parse_lines(synthetic_trace(random.Random(seed), 200, pids=2).lines)
    assert set(derive_dependences(s)) == brute_force_dependences(s.events)


def test_edges_point_forward_and_fd_values_are_numbers():
    s = parse_lines(synthetic_trace(random.Random(99), 400, pids=3).lines)
    t = {e.event_id: e.timestamp_us for e in s.events}
    for e in derive_dependences(s):
        assert t[e.from_event] <= t[e.to_event] and e.from_event != e.to_event
        if e.kind == "fd-flow":
            assert e.value.isdigit()


def test_chain_is_one_component():
    s = _session('open("/a", O_RDONLY) = 5', 'read(5, "", 1) = 0', "close(5) = 0")
    (g,) = build_scdgs(s)
    assert len(g.nodes) == 3 and len(g.edges) == 2


def test_two_interleaved_chains():
    s = _session('open("/a", O_RDONLY) = 5', 'open("/b", O_RDONLY) = 6', 'read(5, "", 1) = 0',
                 'read(6, "", 1) = 0', "close(5) = 0", "close(6) = 0")
    graphs = build_scdgs(s)
    assert [[n.node_id for n in g.nodes] for g in graphs] == [[0, 2, 4], [1, 3, 5]]


def test_labels_normalized_and_attributes():
    s = _session('openat(AT_FDCWD, "/sdcard/a", O_RDONLY) = 5', "dup3(5, 9, 0) = 9", "fstat64(9, {st_size=1}) = 0",
                 'openat(AT_FDCWD, "/nope", O_RDONLY) = -1 ENOENT (No such file or directory)')
    graphs = build_scdgs(s)
    assert [n.label for n in graphs[0].nodes] == ["open", "dup", "fstat"]
    assert graphs[0].nodes[2].attr("path_class") == "external-storage"
    assert graphs[1].nodes[0].attr("success") is False


def test_path_classes():
    c = PathClassifier()
    assert [c.classify(p) for p in ("/data/data/x", "/sdcard/a", "/dev/binder", "/dev/ashmem", "/system/lib",
                                    "/tmp/x", None)] == [
        "app-data", "external-storage", "dev-binder", "dev-ashmem", "system", "other", "other"]


def test_camera_storage_component():
    graphs = build_scdgs(load_trace(CAMERA / "camera.strace"))
    five = [g for g in graphs if len(g.nodes) == 5]
    assert len(five) == 1
    assert [n.label for n in five[0].nodes] == ["stat", "ioctl", "gettimeofday", "open", "write"]
    assert five[0].pid == 1241


def test_partition_and_connectivity():
    s = parse_lines(synthetic_trace(random.Random(5), 600, pids=3).lines)
    graphs = build_scdgs(s)
    ids = [n.node_id for g in graphs for n in g.nodes]
    assert sorted(ids) == [e.event_id for e in s.events]
    for g in graphs:
        members = {n.node_id for n in g.nodes}
        adj = {i: set() for i in members}
        for e in g.edges:
            assert e.from_event in members and e.to_event in members
            adj[e.from_event].add(e.to_event)
            adj[e.to_event].add(e.from_event)
        seen, todo = set(), [next(iter(members))]
        while todo:
            x = todo.pop()
            if x not in seen:
                seen.add(x)
                todo.extend(adj[x])
        assert seen == members
        assert g.span_us[0] <= g.span_us[1]
    assert [g.span_us[0] for g in graphs] == sorted(g.span_us[0] for g in graphs)


def test_export_single_node_dot():
    (g,) = build_scdgs(_session("close(5) = 0"))
    dot = export_graph(g, "dot")
    assert dot.startswith("digraph") and dot.count("[label=") == 1 and "->" not in dot


def test_export_camera_dot_labels():
    g = next(g for g in build_scdgs(load_trace(CAMERA / "camera.strace")) if len(g.nodes) == 5)
    dot = export_graph(g, "dot")
    for label in ("stat", "ioctl", "gettimeofday", "open", "write"):
        assert f'label="{label}@' in dot
    assert dot.count("->") == len(g.edges)


def test_json_round_trip_on_fixture():
    for g in build_scdgs(load_trace(CAMERA / "camera.strace")):
        assert import_graph(export_graph(g, "json")) == g
        assert graph_from_dict(graph_to_dict(g)).node_times == g.node_times


def test_import_rejects_bad_edges():
    g = build_scdgs(_session('open("/a", O_RDONLY) = 5', 'read(5, "", 1) = 0'))[0]
    d = graph_to_dict(g)
    d["edges"][0]["to"] = 42
    with pytest.raises(SchemaError):
        graph_from_dict(d)
    d["edges"][0].update(to=1, kind="control")
    with pytest.raises(SchemaError):
        graph_from_dict(d)


def test_build_is_deterministic():
    s = load_trace(CAMERA / "camera.strace")
    a = [export_graph(g) for g in build_scdgs(s)]
    b = [export_graph(g) for g in build_scdgs(load_trace(CAMERA / "camera.strace"))]
    assert a == b


def test_edge_ordering_is_total():
    a = DependenceEdge(0, 1, 0, "fd-flow", "3")
    b = DependenceEdge(0, 1, 0, "value-match", "1553102851")
    assert sorted([b, a]) == [a, b]

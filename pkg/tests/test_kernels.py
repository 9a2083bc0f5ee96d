from __future__ import annotations

import random
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scdgmap import _kernels
from scdgmap.matching import _encode, _visit_order

from conftest import CAMERA
from synth import random_graph

py = _kernels.python_backend
cc = _kernels.compiled_backend
needs_compiled = pytest.mark.skipif(cc is None, reason="compiled kernels not built")


def test_backend_selection():
    assert _kernels.BACKEND in ("compiled", "python")
    assert (_kernels.BACKEND == "compiled") == (cc is not None)


@pytest.mark.parametrize("text,expected", [
    ("a, b, c) = 0", (["a", "b", "c"], 7)),
    (") = 0", ([], 0)),
    ('"x,)", {a=1, b=[2, 3]}, f(g)) = 0', (['"x,)"', "{a=1, b=[2, 3]}", "f(g)"], 28)),
    ('"esc\\"aped", 1) = 0', (['"esc\\"aped"', "1"], 14)),
    ("5, ", (["5"], -1)),
    ('"unterminated', (['"unterminated'], -1)),
])
def test_scan_args_cases(text, expected):
    assert py.scan_args(text, 0) == expected
    if cc is not None:
        assert cc.scan_args(text, 0) == expected


@needs_compiled
@settings(max_examples=400, deadline=None)
@given(st.text(alphabet='ab1 ,"\\(){}[]=x', max_size=40), st.integers(0, 5))
def test_scan_args_parity(text, pos):
    pos = min(pos, len(text))
    assert cc.scan_args(text, pos) == py.scan_args(text, pos)


@needs_compiled
def test_scan_args_parity_on_fixture():
    for line in (CAMERA / "camera.strace").read_text().splitlines():
        start = line.find("(") + 1
        if start:
            assert cc.scan_args(line, start) == py.scan_args(line, start)


@needs_compiled
@pytest.mark.parametrize("induced", [True, False])
def test_find_embedding_parity(induced):
    rng = random.Random(21 if induced else 22)
    for _ in range(300):
        b = random_graph(rng, rng.randint(1, 8), labels="ab", density=0.35)
        a = random_graph(rng, len(b.nodes) if induced else rng.randint(1, len(b.nodes)), labels="ab",
                         density=0.35)
        ids: dict[str, int] = {}
        la, adj_a, masks_a = _encode(a, False, ids)
        lb, adj_b, _ = _encode(b, False, ids)
        order = _visit_order(len(la), masks_a, la)
        assert cc.find_embedding(la, adj_a, lb, adj_b, order, induced) == \
               py.find_embedding(la, adj_a, lb, adj_b, order, induced)


def test_pipeline_identical_on_python_backend(monkeypatch, tmp_path):
    """The whole camera run gives the same artifacts with either backend."""
    import shutil

    from scdgmap import matching, trace
    from scdgmap.cli import main

    shutil.copytree(CAMERA, tmp_path / "c")
    cfg = str(tmp_path / "c" / "run.yaml")
    outputs = []
    for backend in (_kernels, py):
        monkeypatch.setattr(trace, "scan_args", backend.scan_args)
        monkeypatch.setattr(matching, "find_embedding", backend.find_embedding)
        out = tmp_path / f"out-{len(outputs)}"
        main(["scdg", "--config", cfg, "--out", str(out)])
        main(["detect", "--config", cfg, "--out", str(out), "--logcat", str(tmp_path / "c" / "evasion.logcat")])
        outputs.append([(out / n).read_bytes() for n in ("graphs.json", "verdicts.json")])
    assert outputs[0] == outputs[1]


def test_benchmark_script_runs(capsys):
    import importlib.util
    path = Path(__file__).resolve().parent.parent / "benchmarks" / "bench_kernels.py"
    spec = importlib.util.spec_from_file_location("bench_kernels", path)
    mod = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(mod)
    assert mod.main(["--repeat", "1", "--graphs", "5"]) == 0
    out = capsys.readouterr().out
    assert "scan_args" in out and "find_embedding" in out

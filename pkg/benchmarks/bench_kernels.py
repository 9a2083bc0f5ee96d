"""Compare the compiled and pure-Python kernels on identical inputs.

    python3 benchmarks/bench_kernels.py [--repeat N]

Argument scanning runs over every line of the 10k-line synthetic fixture;
embedding search runs subgraph and isomorphism queries on random graphs.
Prints one row per kernel with the time for each backend and the speedup.
"""
from __future__ import annotations

import argparse
import random
import sys
import timeit
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "tests"))

from scdgmap._kernels import compiled_backend, python_backend
from scdgmap.matching import _encode, _visit_order

from synth import random_graph, relabel

FIXTURE = ROOT / "tests" / "fixtures" / "synthetic_10k.strace"


def scan_inputs() -> list[tuple[str, int]]:
    out = []
    for line in FIXTURE.read_text(encoding="utf-8").splitlines():
        i = line.find("(")
        if i > 0 and "resumed>" not in line:
            out.append((line, i + 1))
    return out


def embedding_inputs(rng: random.Random, count: int) -> list[tuple]:
    out = []
    for _ in range(count):
        n = rng.randint(6, 12)
        target = random_graph(rng, n, labels="abc", density=0.25)
        perm = list(range(n))
        rng.shuffle(perm)
        for pattern, induced in ((relabel(target, perm), True), (random_graph(rng, 4, "abc", 0.3), False)):
            ids: dict[str, int] = {}
            la, adj_a, masks_a = _encode(pattern, False, ids)
            lb, adj_b, _ = _encode(target, False, ids)
            out.append((la, adj_a, lb, adj_b, _visit_order(len(la), masks_a, la), induced))
    return out


def bench(backend, scans, embeds, repeat: int) -> tuple[float, float]:
    def run_scan():
        for text, pos in scans:
            backend.scan_args(text, pos)

    def run_embed():
        for args in embeds:
            backend.find_embedding(*args)

    return (min(timeit.repeat(run_scan, number=1, repeat=repeat)),
            min(timeit.repeat(run_embed, number=1, repeat=repeat)))


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--graphs", type=int, default=300)
    args = parser.parse_args(argv)

    scans = scan_inputs()
    embeds = embedding_inputs(random.Random(1), args.graphs)
    for text, pos in scans:
        if compiled_backend and compiled_backend.scan_args(text, pos) != python_backend.scan_args(text, pos):
            raise SystemExit(f"backends disagree on: {text}")

    py = bench(python_backend, scans, embeds, args.repeat)
    if compiled_backend is None:
        print("compiled kernels not built; python timings only")
    c = bench(compiled_backend, scans, embeds, args.repeat) if compiled_backend else None
    print(f"{'kernel':<16}{'calls':>8}{'python s':>12}{'compiled s':>12}{'speedup':>10}")
    for k, (name, calls) in enumerate((("scan_args", len(scans)), ("find_embedding", len(embeds)))):
        if c is None:
            print(f"{name:<16}{calls:>8}{py[k]:>12.4f}{'-':>12}{'-':>10}")
        else:
            print(f"{name:<16}{calls:>8}{py[k]:>12.4f}{c[k]:>12.4f}{py[k] / c[k]:>9.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())

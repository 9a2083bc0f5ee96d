"""Command-line front end.

Each subcommand runs the pipeline from its raw inputs up to its own stage and
writes its artifact into the output directory:

    parse   -> events.jsonl
    scdg    -> graphs.json, graphs.dot
    map     -> mapping.json (+ table on stdout)
    sign    -> signature store (entries appended or replaced)
    detect  -> verdicts.json (+ table on stdout)
    export  -> dot/graph-NNNN.dot

Exit status: 0 success, 1 input error, 2 when ``detect`` reports a verdict.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .android import load_api_events, load_api_permission_map, parse_manifest
from .config import RunConfig, load_config, make_header, with_overrides
from .errors import ConfigError, ScdgMapError
from .ipc import IpcAnalysis, ServiceMap, extract_ipc, load_service_map
from .mapping import MappingReport, assign_scdgs_to_apis
from .matching import (
    build_signature,
    detect_abuse,
    load_signature_store,
    match_signatures,
    signature_store_document,
)
from .scdg import SCHEMA_VERSION, Scdg, build_scdgs, export_graph, graphs_document
from .trace import TraceSession, event_to_dict, load_trace

log = logging.getLogger("scdgmap")

EXIT_OK, EXIT_INPUT_ERROR, EXIT_FINDINGS = 0, 1, 2
COMMANDS = ("parse", "scdg", "map", "sign", "detect", "export")


def _dumps(doc: object) -> str:
    return json.dumps(doc, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def write_atomic(path: Path, text: str) -> None:
    """Write via a temp file in the same directory and rename over ``path``."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


# -- pipeline stages --------------------------------------------------------

@dataclass
class Analysis:
    session: TraceSession
    graphs: list[Scdg]
    ipc: IpcAnalysis | None = None


def analyze(config: RunConfig, trace_path: str, service_map: ServiceMap | None = None,
            with_ipc: bool = False) -> Analysis:
    session = load_trace(trace_path, config.parse_config())
    graphs = build_scdgs(session, config.rules, config.normalization, config.classifier())
    ipc = None
    if with_ipc:
        ipc = extract_ipc(graphs, session, service_map, config.binder_devices, config.ashmem_devices)
    return Analysis(session, graphs, ipc)


def map_run(config: RunConfig) -> tuple[Analysis, MappingReport]:
    service_map = load_service_map(config.service_map_path) if config.service_map_path else None
    result = analyze(config, config.trace_path, service_map, with_ipc=True)
    apis = load_api_events(config.logcat_path, config.logcat_config())
    report = assign_scdgs_to_apis(result.graphs, apis.events, config.map, result.ipc.interactions)
    return result, report


def _parse_outputs(config: RunConfig, trace_path: str, header: dict) -> dict[str, str]:
    session = load_trace(trace_path, config.parse_config())
    summary = {"events": len(session.events), "filtered": session.filtered_count,
               "skipped": session.skipped_count, "merged_pairs": session.merged_pair_count,
               "physical_lines": session.physical_line_count}
    lines = [json.dumps({"header": header, "summary": summary}, sort_keys=True, separators=(",", ":"))]
    lines.extend(json.dumps(event_to_dict(e), sort_keys=True, separators=(",", ":")) for e in session.events)
    return {"events.jsonl": "\n".join(lines) + "\n"}


def _dot_bundle(graphs: Sequence[Scdg], header: dict) -> str:
    banner = "// scdgmap header: " + json.dumps(header, sort_keys=True, separators=(",", ":")) + "\n"
    return banner + "".join(export_graph(g, "dot") for g in graphs)


def _scdg_outputs(config: RunConfig, trace_path: str, header: dict) -> dict[str, str]:
    graphs = analyze(config, trace_path).graphs
    doc = {"header": header, **graphs_document(graphs)}
    return {"graphs.json": _dumps(doc), "graphs.dot": _dot_bundle(graphs, header)}


def _export_outputs(config: RunConfig, trace_path: str, header: dict) -> dict[str, str]:
    graphs = analyze(config, trace_path).graphs
    banner = "// scdgmap header: " + json.dumps(header, sort_keys=True, separators=(",", ":")) + "\n"
    files = {f"dot/graph-{g.graph_id:04d}.dot": banner + export_graph(g, "dot") for g in graphs}
    index = {"header": header, "schema_version": SCHEMA_VERSION,
             "graphs": [{"graph_id": g.graph_id, "nodes": len(g.nodes), "file": f"graph-{g.graph_id:04d}.dot"}
                        for g in graphs]}
    files["dot/index.json"] = _dumps(index)
    return files


_PER_TRACE = {"parse": _parse_outputs, "scdg": _scdg_outputs, "export": _export_outputs}


def _per_trace_job(args: tuple[str, RunConfig, str, dict]) -> dict[str, str]:
    command, config, trace_path, header = args
    return _PER_TRACE[command](config, trace_path, header)


def _run_per_trace(config: RunConfig, command: str, jobs: int) -> dict[str, str]:
    header = make_header(config, command)
    traces = list(config.trace_paths)
    tasks = [(command, config, t, header) for t in traces]
    if jobs > 1 and len(traces) > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(traces))) as pool:
            results = list(pool.map(_per_trace_job, tasks))
    else:
        results = [_per_trace_job(t) for t in tasks]
    if len(traces) == 1:
        return results[0]
    # several traces: one subdirectory per trace, named by file stem and position
    out: dict[str, str] = {}
    for i, (trace, files) in enumerate(zip(traces, results)):
        prefix = f"{i:02d}-{Path(trace).stem}/"
        out.update({prefix + name: text for name, text in files.items()})
    return out


def _mapping_table(report: MappingReport, graphs: Sequence[Scdg]) -> str:
    sizes = {g.graph_id: len(g.nodes) for g in graphs}
    rows = [f"{'graph':>5}  {'nodes':>5}  {'overlap':>7}  api"]
    for a in report.assignments:
        rows.append(f"{a.graph_id:>5}  {sizes.get(a.graph_id, 0):>5}  {a.overlap:>7.2f}  "
                    f"{a.api_name} @{a.api_t_us} tid={a.api_tid}")
    for gid in report.unmapped_graphs:
        rows.append(f"{gid:>5}  {sizes.get(gid, 0):>5}  {'-':>7}  (unmapped)")
    for api in report.unevidenced_apis:
        rows.append(f"{'-':>5}  {'-':>5}  {'-':>7}  {api.api_name} @{api.timestamp_us} (no graph)")
    return "\n".join(rows) + "\n"


def run_pipeline(config: RunConfig, command: str, jobs: int = 1, api_names: Sequence[str] = (),
                 stdout=None) -> int:
    """Run one subcommand and write its artifacts. Returns the exit status."""
    stdout = stdout or sys.stdout
    out_dir = Path(config.output_dir)
    header = make_header(config, command)

    if command in _PER_TRACE:
        config.require("trace_paths")
        files = _run_per_trace(config, command, jobs)
        for name, text in sorted(files.items()):
            write_atomic(out_dir / name, text)
        return EXIT_OK

    if len(config.trace_paths) != 1:
        raise ConfigError(f"{command} takes exactly one trace, got {len(config.trace_paths)}")

    if command == "map":
        config.require("trace_paths", "logcat_path")
        result, report = map_run(config)
        doc = {"header": header, **report.to_dict(), "ipc_diagnostics": list(result.ipc.diagnostics)}
        write_atomic(out_dir / "mapping.json", _dumps(doc))
        stdout.write(_mapping_table(report, result.graphs))
        return EXIT_OK

    if command == "sign":
        config.require("trace_paths", "logcat_path", "perm_map_path", "signature_store_path")
        if not api_names:
            raise ConfigError("sign needs at least one --api")
        result, report = map_run(config)
        perm_map = load_api_permission_map(config.perm_map_path)
        store = load_signature_store(config.signature_store_path)
        for name in api_names:
            sig = build_signature(report, result.graphs, name, perm_map, config.use_attributes,
                                  provenance=Path(config.trace_path).name, rounds=config.hash_rounds)
            store = [s for s in store if (s.api_name, s.canon_hash) != (sig.api_name, sig.canon_hash)]
            store.append(sig)
            stdout.write(f"signed {name}: {sig.min_nodes} nodes, hash {sig.canon_hash}\n")
        write_atomic(Path(config.signature_store_path), _dumps(signature_store_document(store, header)))
        return EXIT_OK

    if command == "detect":
        config.require("trace_paths", "logcat_path", "manifest_path", "perm_map_path", "signature_store_path")
        if not Path(config.signature_store_path).is_file():
            raise ConfigError(f"signature store not found: {config.signature_store_path}")
        result, report = map_run(config)
        perm_map = load_api_permission_map(config.perm_map_path)
        sigs = load_signature_store(config.signature_store_path)
        manifest = parse_manifest(config.manifest_path, config.pid_package_map)
        verdicts = detect_abuse(manifest, report, sigs, perm_map, result.graphs,
                                config.min_match_size, config.max_nodes)
        matches = match_signatures(result.graphs, sigs, "subgraph", config.min_match_size, config.max_nodes)
        doc = {
            "header": header,
            "schema_version": SCHEMA_VERSION,
            "manifest": manifest.to_dict(),
            "matches": [{"graph_id": m.graph_id, "api_name": m.api_name,
                         "witness": [list(p) for p in m.witness]} for m in matches],
            "verdicts": [v.to_dict() for v in verdicts],
        }
        write_atomic(out_dir / "verdicts.json", _dumps(doc))
        if verdicts:
            stdout.write(f"{'kind':<20} {'subject':<45} evidence\n")
            for v in verdicts:
                stdout.write(f"{v.kind:<20} {v.subject:<45} {', '.join(v.evidence) or '-'}\n")
        stdout.write(f"{len(verdicts)} verdict(s) for {manifest.packname}\n")
        return EXIT_FINDINGS if verdicts else EXIT_OK

    raise ConfigError(f"unknown command {command!r}")


# -- argument handling ------------------------------------------------------

COMMAND_HELP = {
    "parse": "normalize traces into events.jsonl",
    "scdg": "build dependence graphs (graphs.json, graphs.dot)",
    "map": "assign graphs to API calls (mapping.json)",
    "sign": "add graphs mapped to --api to the signature store",
    "detect": "match signatures and report verdicts (verdicts.json)",
    "export": "write one DOT file per graph",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scdgmap", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML/JSON config, or any artifact whose header holds one")
    common.add_argument("--trace", action="append", default=[], help="strace -f -ttt output (repeatable)")
    common.add_argument("--logcat", help="logcat -v epoch output")
    common.add_argument("--manifest", help="AndroidManifest.xml")
    common.add_argument("--perm-map", help="API -> permissions JSON")
    common.add_argument("--service-map", help="binder handle/device -> service JSON")
    common.add_argument("--signatures", help="signature store JSON")
    common.add_argument("--out", help="output directory")
    common.add_argument("--max-window-us", type=int, help="longest API-to-graph gap considered")
    common.add_argument("--clock-offset-us", type=int, help="added to logcat times before mapping")
    common.add_argument("--jobs", type=int, default=1, help="worker processes across trace files")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common], help=COMMAND_HELP[name])
        if name == "sign":
            p.add_argument("--api", action="append", default=[], required=True,
                           help="API name to build a signature for (repeatable)")
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    config = load_config(args.config) if args.config else RunConfig(output_dir=str(Path(".").resolve()))
    return with_overrides(
        config,
        trace_paths=tuple(args.trace),
        logcat_path=args.logcat,
        manifest_path=args.manifest,
        perm_map_path=args.perm_map,
        service_map_path=args.service_map,
        signature_store_path=args.signatures,
        output_dir=args.out,
        max_window_us=args.max_window_us,
        clock_offset_us=args.clock_offset_us,
    )


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="scdgmap: %(levelname)s: %(message)s")
    try:
        config = resolve_config(args)
        return run_pipeline(config, args.command, max(1, args.jobs), getattr(args, "api", ()))
    except ScdgMapError as exc:
        print(f"scdgmap: error: {exc}", file=sys.stderr)
        return EXIT_INPUT_ERROR
    except OSError as exc:
        print(f"scdgmap: error: {exc.filename or ''}: {exc.strerror}", file=sys.stderr)
        return EXIT_INPUT_ERROR


if __name__ == "__main__":
    raise SystemExit(main())

"""Graph identity for SCDGs: canonical hashing, isomorphism, signatures, verdicts.

Matching works on the label/kind skeleton of a graph: node labels are the
normalized syscall names, and parallel edges between the same pair collapse
into one bitmask of dependence kinds. In ``attributes`` mode the node's path
class and success flag become part of its label.
"""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from ._kernels import find_embedding
from .android import ApiEvent, ApiPermissionMap, PermissionManifest
from .errors import NoEvidence, SchemaError, SizeLimit
from .mapping import MappingReport
from .scdg import EDGE_KINDS, SCHEMA_VERSION, Scdg, graph_from_dict, graph_to_dict

log = logging.getLogger(__name__)

DEFAULT_MAX_NODES = 512
DEFAULT_ROUNDS = 3
KIND_BITS = {kind: 1 << i for i, kind in enumerate(EDGE_KINDS)}

VERDICT_KINDS = ("ApiEvasion", "Overprivileged", "UndeclaredBehavior")


def node_labels(g: Scdg, use_attributes: bool = False) -> list[str]:
    if not use_attributes:
        return [n.label for n in g.nodes]
    return [f"{n.label}|{n.attr('path_class', '')}|{n.attr('success', '')}" for n in g.nodes]


def kind_masks(g: Scdg) -> dict[tuple[int, int], int]:
    """Collapsed edges as ``(src_index, dst_index) -> kind bitmask``."""
    index = {n.node_id: i for i, n in enumerate(g.nodes)}
    masks: dict[tuple[int, int], int] = {}
    for e in g.edges:
        key = (index[e.from_event], index[e.to_event])
        masks[key] = masks.get(key, 0) | KIND_BITS[e.kind]
    return masks


def _digest(text: str) -> str:
    return hashlib.blake2b(text.encode("utf-8"), digest_size=16).hexdigest()


def canonical_hash(g: Scdg, rounds: int = DEFAULT_ROUNDS, use_attributes: bool = False) -> str:
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    colors = node_labels(g, use_attributes)
    masks = kind_masks(g)
    out_nbrs: list[list[tuple[int, int]]] = [[] for _ in colors]
    in_nbrs: list[list[tuple[int, int]]] = [[] for _ in colors]
    for (u, v), mask in masks.items():
        out_nbrs[u].append((v, mask))
        in_nbrs[v].append((u, mask))
    history = [sorted(colors)]
    for _ in range(rounds):
        new = []
        for u, color in enumerate(colors):
            neigh = sorted(
                [f">{mask}:{colors[v]}" for v, mask in out_nbrs[u]] + [f"<{mask}:{colors[w]}" for w, mask in in_nbrs[u]]
            )
            new.append(_digest(color + "(" + ",".join(neigh) + ")"))
        colors = new
        history.append(sorted(colors))
    summary = json.dumps([len(g.nodes), len(masks), history], separators=(",", ":"))
    return _digest(summary)


def _visit_order(n: int, masks: Mapping[tuple[int, int], int], labels: Sequence[int]) -> list[int]:
    """Pattern order: connected growth, most constrained node first."""
    adj: list[set[int]] = [set() for _ in range(n)]
    for u, v in masks:
        adj[u].add(v)
        adj[v].add(u)
    freq: dict[int, int] = {}
    for lab in labels:
        freq[lab] = freq.get(lab, 0) + 1
    order: list[int] = []
    placed = [False] * n
    links = [0] * n
    while len(order) < n:
        best = max(
            (u for u in range(n) if not placed[u]),
            key=lambda u: (links[u], -freq[labels[u]], len(adj[u]), -u),
        )
        placed[best] = True
        order.append(best)
        for w in adj[best]:
            links[w] += 1
    return order


def _encode(g: Scdg, use_attributes: bool, label_ids: dict[str, int]) -> tuple[list[int], bytes, dict]:
    labels = [label_ids.setdefault(s, len(label_ids)) for s in node_labels(g, use_attributes)]
    n = len(labels)
    matrix = bytearray(n * n)
    masks = kind_masks(g)
    for (u, v), mask in masks.items():
        matrix[u * n + v] = mask
    return labels, bytes(matrix), masks


def _embed(pattern: Scdg, target: Scdg, induced: bool, use_attributes: bool,
           max_nodes: int) -> dict[int, int] | None:
    for g in (pattern, target):
        if len(g.nodes) > max_nodes:
            raise SizeLimit(len(g.nodes), max_nodes)
    label_ids: dict[str, int] = {}
    la, adj_a, masks_a = _encode(pattern, use_attributes, label_ids)
    lb, adj_b, masks_b = _encode(target, use_attributes, label_ids)
    if induced and (len(la) != len(lb) or len(masks_a) != len(masks_b) or sorted(la) != sorted(lb)):
        return None
    order = _visit_order(len(la), masks_a, la)
    found = find_embedding(la, adj_a, lb, adj_b, order, induced)
    if found is None:
        return None
    return {pattern.nodes[u].node_id: target.nodes[v].node_id for u, v in enumerate(found)}


def is_isomorphic(a: Scdg, b: Scdg, mode: str = "exact",
                  max_nodes: int = DEFAULT_MAX_NODES) -> tuple[bool, dict[int, int] | None]:
    """Exact labeled isomorphism; returns ``(found, witness)``.

    The witness maps node ids of ``a`` to node ids of ``b``.
    """
    if mode not in ("exact", "attributes"):
        raise ValueError(f"unknown isomorphism mode {mode!r}")
    witness = _embed(a, b, True, mode == "attributes", max_nodes)
    return witness is not None, witness


def find_monomorphism(pattern: Scdg, target: Scdg, use_attributes: bool = False,
                      max_nodes: int = DEFAULT_MAX_NODES) -> dict[int, int] | None:
    """Injective label/kind-preserving embedding of ``pattern`` into ``target``."""
    return _embed(pattern, target, False, use_attributes, max_nodes)


# -- signatures -------------------------------------------------------------

@dataclass(frozen=True)
class ApiSignature:
    api_name: str
    graph: Scdg
    canon_hash: str
    min_nodes: int
    provenance: str = ""
    implied_permissions: frozenset[str] = frozenset()
    use_attributes: bool = False
    rounds: int = DEFAULT_ROUNDS

    def validate(self) -> None:
        if self.min_nodes != len(self.graph.nodes) or self.min_nodes < 2:
            raise SchemaError(f"signature {self.api_name}: min_nodes must equal the graph size and be >= 2")
        if canonical_hash(self.graph, self.rounds, self.use_attributes) != self.canon_hash:
            raise SchemaError(f"signature {self.api_name}: canon_hash does not match its graph")

    def to_dict(self) -> dict:
        return {
            "api_name": self.api_name,
            "canon_hash": self.canon_hash,
            "min_nodes": self.min_nodes,
            "provenance": self.provenance,
            "implied_permissions": sorted(self.implied_permissions),
            "use_attributes": self.use_attributes,
            "rounds": self.rounds,
            "graph": graph_to_dict(self.graph),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> ApiSignature:
        try:
            sig = cls(
                api_name=str(d["api_name"]),
                graph=graph_from_dict(d["graph"]),
                canon_hash=str(d["canon_hash"]),
                min_nodes=int(d["min_nodes"]),
                provenance=str(d.get("provenance", "")),
                implied_permissions=frozenset(d.get("implied_permissions", ())),
                use_attributes=bool(d.get("use_attributes", False)),
                rounds=int(d.get("rounds", DEFAULT_ROUNDS)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"invalid signature entry: {exc}") from None
        sig.validate()
        return sig


def load_signature_store(path: str | Path) -> list[ApiSignature]:
    path = Path(path)
    if not path.exists():
        return []
    with path.open(encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}:{exc.lineno}: signature store is not valid JSON ({exc.msg})") from None
    if not isinstance(data, dict) or "signatures" not in data:
        raise SchemaError(f"{path}: expected an object with a 'signatures' array")
    return [ApiSignature.from_dict(d) for d in data["signatures"]]


def signature_store_document(sigs: Iterable[ApiSignature], header: Mapping | None = None) -> dict:
    doc: dict = {"schema_version": SCHEMA_VERSION}
    if header is not None:
        doc["header"] = dict(header)
    doc["signatures"] = [s.to_dict() for s in sorted(sigs, key=lambda s: (s.api_name, s.canon_hash))]
    return doc


def build_signature(
    report: MappingReport,
    scdgs: Sequence[Scdg],
    api_name: str,
    perm_map: ApiPermissionMap,
    use_attributes: bool = False,
    provenance: str = "",
    rounds: int = DEFAULT_ROUNDS,
) -> ApiSignature:
    by_id = {g.graph_id: g for g in scdgs}
    candidates = [by_id[gid] for gid in report.graphs_for(api_name) if gid in by_id and len(by_id[gid].nodes) >= 2]
    if not candidates:
        raise NoEvidence(api_name)
    graph = max(candidates, key=lambda g: (len(g.nodes), len(g.edges), -g.graph_id))
    if api_name not in perm_map:
        log.warning("%s has no entry in the API permission map; signature implies no permissions", api_name)
    return ApiSignature(
        api_name=api_name,
        graph=graph,
        canon_hash=canonical_hash(graph, rounds, use_attributes),
        min_nodes=len(graph.nodes),
        provenance=provenance,
        implied_permissions=perm_map.permissions_for(api_name),
        use_attributes=use_attributes,
        rounds=rounds,
    )


@dataclass(frozen=True, order=True)
class SignatureMatch:
    graph_id: int
    api_name: str
    witness: tuple[tuple[int, int], ...] = field(compare=False, default=())

    @property
    def witness_map(self) -> dict[int, int]:
        return dict(self.witness)


def _label_multiset_fits(pattern: Scdg, target: Scdg, use_attributes: bool, exact: bool) -> bool:
    need: dict[str, int] = {}
    for s in node_labels(pattern, use_attributes):
        need[s] = need.get(s, 0) + 1
    have: dict[str, int] = {}
    for s in node_labels(target, use_attributes):
        have[s] = have.get(s, 0) + 1
    if exact:
        return need == have
    return all(have.get(s, 0) >= c for s, c in need.items())


def match_signatures(
    scdgs: Sequence[Scdg],
    sigs: Sequence[ApiSignature],
    mode: str = "graph",
    min_match_size: int = 2,
    max_nodes: int = DEFAULT_MAX_NODES,
) -> list[SignatureMatch]:
    """Find signatures in graphs.

    ``graph`` mode requires whole-graph isomorphism (hash pre-filter first);
    ``subgraph`` mode accepts the signature embedded in a larger graph.
    Graphs below ``min_match_size`` nodes are never matched.
    """
    if mode not in ("graph", "subgraph"):
        raise ValueError(f"unknown match mode {mode!r}")
    for sig in sigs:
        sig.validate()
    results: list[SignatureMatch] = []
    hash_cache: dict[tuple[int, int, bool], str] = {}
    for g in scdgs:
        if len(g.nodes) < min_match_size:
            continue
        for sig in sigs:
            if len(g.nodes) < sig.min_nodes:
                continue
            if mode == "graph":
                if len(g.nodes) != sig.min_nodes:
                    continue
                key = (g.graph_id, sig.rounds, sig.use_attributes)
                if key not in hash_cache:
                    hash_cache[key] = canonical_hash(g, sig.rounds, sig.use_attributes)
                if hash_cache[key] != sig.canon_hash:
                    continue
                witness = _embed(sig.graph, g, True, sig.use_attributes, max_nodes)
            else:
                if not _label_multiset_fits(sig.graph, g, sig.use_attributes, exact=False):
                    continue
                witness = _embed(sig.graph, g, False, sig.use_attributes, max_nodes)
            if witness is not None:
                results.append(SignatureMatch(g.graph_id, sig.api_name, tuple(sorted(witness.items()))))
    return sorted(results)


# -- verdicts ---------------------------------------------------------------

@dataclass(frozen=True, order=True)
class Verdict:
    kind: str
    subject: str
    evidence: tuple[str, ...] = ()
    explanation: str = ""

    def __post_init__(self) -> None:
        if self.kind not in VERDICT_KINDS:
            raise ValueError(f"unknown verdict kind {self.kind!r}")
        if self.kind != "Overprivileged" and not self.evidence:
            raise ValueError(f"{self.kind} verdicts need evidence")
        if not self.explanation:
            raise ValueError("verdicts need an explanation")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "subject": self.subject, "evidence": list(self.evidence),
                "explanation": self.explanation}


def _api_ref(api: ApiEvent) -> str:
    return f"api:{api.api_name}@{api.timestamp_us}/{api.pid}/{api.tid}"


def detect_abuse(
    manifest: PermissionManifest,
    report: MappingReport,
    sigs: Sequence[ApiSignature],
    perm_map: ApiPermissionMap,
    scdgs: Sequence[Scdg] = (),
    min_match_size: int = 2,
    max_nodes: int = DEFAULT_MAX_NODES,
) -> list[Verdict]:
    """Permission-abuse and API-evasion verdicts for one run.

    Permission evidence comes from every logged API call in the report and
    from every signature found (subgraph mode) in the run's graphs.
    """
    api_events = report.api_events
    matches = match_signatures(scdgs, sigs, "subgraph", min_match_size, max_nodes)
    sig_by_api: dict[str, list[ApiSignature]] = {}
    for sig in sigs:
        sig_by_api.setdefault(sig.api_name, []).append(sig)

    used: dict[str, set[str]] = {}
    for api in api_events:
        for perm in perm_map.permissions_for(api.api_name):
            used.setdefault(perm, set()).add(_api_ref(api))
    for m in matches:
        for sig in sig_by_api[m.api_name]:
            for perm in sig.implied_permissions:
                used.setdefault(perm, set()).add(f"graph:{m.graph_id}")

    verdicts: list[Verdict] = []
    declared = set(manifest.permissions)
    for perm in manifest.permissions:
        if perm not in used:
            verdicts.append(Verdict(
                "Overprivileged", perm, (),
                f"{manifest.packname} declares {perm} but no logged API call or matched signature requires it",
            ))
    for perm in sorted(set(used) - declared):
        verdicts.append(Verdict(
            "UndeclaredBehavior", perm, tuple(sorted(used[perm])),
            f"observed behavior requires {perm}, which {manifest.packname} does not declare",
        ))

    pid_of = {g.graph_id: g.pid for g in scdgs}
    evasions: dict[str, set[str]] = {}
    for m in matches:
        assigned = report.assignment_for(m.graph_id)
        if assigned is not None and assigned.api_name == m.api_name:
            continue
        pid = pid_of[m.graph_id]
        called = any(api.api_name == m.api_name and pid in (api.pid, api.tid) for api in api_events)
        if not called:
            evasions.setdefault(m.api_name, set()).add(f"graph:{m.graph_id}")
    for api_name, evidence in evasions.items():
        verdicts.append(Verdict(
            "ApiEvasion", api_name, tuple(sorted(evidence, key=lambda s: int(s.split(":")[1]))),
            f"syscall behavior matching the {api_name} signature ran without any {api_name} call being logged",
        ))
    return sorted(verdicts, key=lambda v: (v.kind, v.subject))

"""System call dependence graphs from strace traces, mapped to Android API events."""
from __future__ import annotations

__version__ = "0.1.0"

from ._kernels import BACKEND
from .android import (
    ApiEvent,
    ApiPermissionMap,
    PermissionManifest,
    load_api_events,
    load_api_permission_map,
    parse_manifest,
)
from .ipc import IpcInteraction, ServiceMap, Unresolved, extract_ipc, load_service_map
from .mapping import MapConfig, MappingReport, assign_scdgs_to_apis
from .matching import (
    ApiSignature,
    Verdict,
    build_signature,
    canonical_hash,
    detect_abuse,
    find_monomorphism,
    is_isomorphic,
    match_signatures,
)
from .scdg import DependenceEdge, DependenceRuleSet, Node, Scdg, build_scdgs, derive_dependences, export_graph
from .trace import ParseConfig, SyscallEvent, TraceSession, load_trace, parse_strace_line

__all__ = [
    "BACKEND", "ApiEvent", "ApiPermissionMap", "ApiSignature", "DependenceEdge", "DependenceRuleSet",
    "IpcInteraction", "MapConfig", "MappingReport", "Node", "ParseConfig", "PermissionManifest", "Scdg",
    "ServiceMap", "SyscallEvent", "TraceSession", "Unresolved", "Verdict", "assign_scdgs_to_apis",
    "build_scdgs", "build_signature", "canonical_hash", "derive_dependences", "detect_abuse",
    "export_graph", "extract_ipc", "find_monomorphism", "is_isomorphic", "load_api_events",
    "load_api_permission_map", "load_service_map", "load_trace", "match_signatures", "parse_manifest",
    "parse_strace_line",
]

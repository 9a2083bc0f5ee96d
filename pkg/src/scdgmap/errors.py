"""Exception types raised by the parsers and analyses."""
from __future__ import annotations


class ScdgMapError(Exception):
    """Base class for all errors reported by this package."""


class MalformedLine(ScdgMapError):
    def __init__(self, position: int, reason: str, path: str | None = None, text: str | None = None):
        self.position = position
        self.reason = reason
        self.path = path
        self.text = text
        where = f"{path}:{position}" if path else f"line {position}"
        super().__init__(f"{where}: {reason}")


class UnpairedResumption(ScdgMapError):
    def __init__(self, position: int, name: str, path: str | None = None):
        self.position = position
        self.name = name
        self.path = path
        where = f"{path}:{position}" if path else f"line {position}"
        super().__init__(f"{where}: '<... {name} resumed>' without a pending unfinished call")


class XmlParseError(ScdgMapError):
    def __init__(self, position: tuple[int, int] | None, reason: str, path: str | None = None):
        self.position = position
        self.path = path
        line, col = position if position else (0, 0)
        super().__init__(f"{path or '<manifest>'}:{line}:{col}: {reason}")


class MissingPackageName(ScdgMapError):
    pass


class DuplicateApiEntry(ScdgMapError):
    def __init__(self, api_name: str, path: str | None = None):
        self.api_name = api_name
        super().__init__(f"{path or '<map>'}: duplicate entry for {api_name!r}")


class SchemaError(ScdgMapError):
    pass


class SizeLimit(ScdgMapError):
    def __init__(self, nodes: int, limit: int):
        self.nodes = nodes
        self.limit = limit
        super().__init__(f"graph with {nodes} nodes exceeds the matching limit of {limit}")


class NoEvidence(ScdgMapError):
    def __init__(self, api_name: str):
        self.api_name = api_name
        super().__init__(f"no SCDG with at least 2 nodes is assigned to {api_name}")


class ConfigError(ScdgMapError):
    pass

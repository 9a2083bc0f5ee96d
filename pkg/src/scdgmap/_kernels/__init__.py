"""Hot kernels: argument scanning and embedding search.

The compiled module is used when it was built; otherwise the pure-Python
implementation is selected. Both expose identical functions, and
``python_backend`` / ``compiled_backend`` give direct access for tests and
benchmarks.
"""
from __future__ import annotations

from types import ModuleType

from . import _pykernels as python_backend

compiled_backend: ModuleType | None
try:
    from . import _ckernels as compiled_backend
except ImportError:  # extension not built
    compiled_backend = None

_active = compiled_backend or python_backend

BACKEND = "compiled" if compiled_backend is not None else "python"

scan_args = _active.scan_args
find_embedding = _active.find_embedding

__all__ = ["BACKEND", "compiled_backend", "find_embedding", "python_backend", "scan_args"]

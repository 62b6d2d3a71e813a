"""Backend selection for the hot loops.

The compiled extension is used when it imports; otherwise the NumPy fallback
is used. Set ``EMRGNN_BACKEND=python`` to force the fallback (the benchmark
and the backend-agreement tests do this per call through :func:`get_backend`).
"""

import logging
import os
from types import ModuleType

from . import _fallback

log = logging.getLogger(__name__)

try:
    from . import _kernels as _compiled
except ImportError:  # pragma: no cover - depends on the build
    _compiled = None


def get_backend(name: str | None = None) -> ModuleType:
    """Return the kernel module for ``name`` ("compiled" or "python")."""
    if name is None:
        return _compiled if _compiled is not None else _fallback
    if name == "python":
        return _fallback
    if name == "compiled":
        if _compiled is None:
            raise RuntimeError("compiled kernels are not built; run `pip install -e .`")
        return _compiled
    raise ValueError(f"unknown backend {name!r}")


_requested = os.environ.get("EMRGNN_BACKEND", "").strip().lower() or None
if _requested == "python" or _compiled is None:
    if _compiled is None:
        log.info("compiled kernels unavailable; using NumPy fallback")
    backend = _fallback
    BACKEND = "python"
else:
    backend = _compiled
    BACKEND = "compiled"

csr_spmm = backend.csr_spmm
emda_loop = backend.emda_loop
HAVE_COMPILED = _compiled is not None

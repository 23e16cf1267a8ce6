"""Hot-loop kernels with a compiled core and a numpy fallback.

The Cython extension is built at install time; if it is missing (source
checkout without a compiler) everything still runs on the numpy reference
implementation.  Set DRIFTBAND_KERNELS=python or =compiled to force a
backend; forcing `compiled` raises if the extension is absent.

Both backends execute the same arithmetic in the same order.  Kernels
whose inner loop is free of transcendental calls (reflected_paths in
unweighted mode, psor_run) match bit for bit; the others agree to a few
ulp because numpy's vectorised exp and libm may round differently.
"""

from __future__ import annotations

import importlib
import os

from . import _python

_requested = os.environ.get("DRIFTBAND_KERNELS", "").strip().lower()
_compiled = None
if _requested != "python":
    try:
        _compiled = importlib.import_module("driftband.kernels._compiled")
    except ImportError:
        if _requested == "compiled":
            raise ImportError(
                "DRIFTBAND_KERNELS=compiled but the extension is not built; "
                "run pip install -e . --no-build-isolation")

_impl = _compiled if _compiled is not None else _python


def backend_name() -> str:
    return "compiled" if _impl is not _python else "python"


def get_backend(name: str | None = None):
    """Return the kernel module for ``name`` (None = the active backend)."""
    if name in (None, ""):
        return _impl
    if name == "python":
        return _python
    if name == "compiled":
        if _compiled is None:
            raise ImportError("compiled kernel backend is not available")
        return _compiled
    raise ValueError(f"unknown backend {name!r}")


def reflected_paths(*args, **kwargs):
    return _impl.reflected_paths(*args, **kwargs)


def dynkin_paths(*args, **kwargs):
    return _impl.dynkin_paths(*args, **kwargs)


def psor_run(*args, **kwargs):
    return _impl.psor_run(*args, **kwargs)

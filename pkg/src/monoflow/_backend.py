"""Selects the compiled kernels when available, the pure-Python ones otherwise.

Set ``MONOFLOW_PURE_PYTHON=1`` to force the fallback (useful for debugging
and for the agreement tests).
"""

import os

from . import _kernels_py

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

if _compiled is not None and not os.environ.get("MONOFLOW_PURE_PYTHON"):
    kernels = _compiled
    BACKEND = "compiled"
else:
    kernels = _kernels_py
    BACKEND = "python"


def compiled_available() -> bool:
    return _compiled is not None


def get_kernels(name=None):
    """Kernel module by name: ``"compiled"``, ``"python"`` or ``None`` (default)."""
    if name is None:
        return kernels
    if name == "python":
        return _kernels_py
    if name == "compiled":
        if _compiled is None:
            raise ImportError("compiled kernels are not built; reinstall with Cython available")
        return _compiled
    raise ValueError(f"unknown backend {name!r}; use 'compiled' or 'python'")


def backend_name(module) -> str:
    """``"compiled"`` or ``"python"`` for a kernel module."""
    return "compiled" if module is _compiled and _compiled is not None else "python"

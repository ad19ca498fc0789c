"""Sampler kernel backends.

The compiled extension is preferred when it imported cleanly; set
NNSD_PURE_PYTHON=1 to force the pure-Python reference kernels.
"""
import os

from . import _pure

try:
    from . import _core
except ImportError:  # extension not built on this install
    _core = None

if os.environ.get("NNSD_PURE_PYTHON") == "1" or _core is None:
    active = _pure
else:
    active = _core

BACKEND = active.BACKEND


def get_backend(name: str | None = None):
    """Resolve a kernel module by name: None/'default', 'pure', or 'compiled'."""
    if name is None or name == "default":
        return active
    if name == "pure":
        return _pure
    if name == "compiled":
        if _core is None:
            raise RuntimeError("compiled kernel is not available in this install")
        return _core
    raise ValueError(f"unknown kernel backend: {name}")

"""Backend selection for the plan kernels.

numba is used when importable unless ``HGEMBED_NUMBA`` is set to a false
value (``0``, ``false``, ``no``, ``off``), in which case the pure-numpy path
runs.  Both expose ``forward`` and ``backward`` with identical signatures.
"""
import os
from types import ModuleType

from . import _kernels_numpy

_FALSE = {"0", "false", "no", "off"}


def _load_numba() -> ModuleType | None:
    try:
        from . import _kernels_numba
    except ImportError:
        return None
    return _kernels_numba


def get_backend(name: str | None = None) -> ModuleType:
    """Return the kernel module for ``name`` ("numba", "numpy") or the default."""
    if name is None:
        name = BACKEND_NAME
    if name == "numpy":
        return _kernels_numpy
    if name == "numba":
        mod = _load_numba()
        if mod is None:
            raise RuntimeError("numba backend requested but numba is not importable")
        return mod
    raise ValueError(f"unknown backend {name!r}")


if os.environ.get("HGEMBED_NUMBA", "1").strip().lower() in _FALSE or _load_numba() is None:
    BACKEND_NAME = "numpy"
else:
    BACKEND_NAME = "numba"

backend = get_backend(BACKEND_NAME)

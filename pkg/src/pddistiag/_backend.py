"""Kernel backend selection.

The compiled extension is used when it imports; set
``PDDISTIAG_BACKEND=python`` to force the NumPy fallback.
"""
import logging
import os

from . import _kernels_py
from .errors import ParameterError

log = logging.getLogger(__name__)

_compiled = None
try:
    from . import _kernels as _compiled  # type: ignore[attr-defined]
except ImportError:  # extension not built
    _compiled = None

BACKENDS = ("cython", "python")


def available():
    return ("cython", "python") if _compiled is not None else ("python",)


def default_backend():
    want = os.environ.get("PDDISTIAG_BACKEND", "").strip().lower()
    if want == "python" or _compiled is None:
        if want == "cython":
            log.warning("compiled kernel requested but not built; using python")
        return "python"
    return "cython"


def get_kernel(name=None):
    name = default_backend() if name is None else name
    if name == "cython":
        if _compiled is None:
            raise ImportError("compiled kernel is not built (run `pip install -e .`)")
        return _compiled
    if name == "python":
        return _kernels_py
    raise ParameterError(f"unknown backend {name!r}; expected one of {BACKENDS}")


BACKEND = default_backend()

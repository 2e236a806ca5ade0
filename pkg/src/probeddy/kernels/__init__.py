"""Hot-loop kernels with a compiled backend and a pure-Python fallback.

The compiled extension ``_ckernels`` is used when it can be imported; setting
the environment variable ``PROBEDDY_PURE_PYTHON=1`` forces the fallback.
Both backends expose the same four functions:

local_minima
    strict periodic 8-neighbour minima below a threshold
marching_squares
    closed/open iso-contours of a 2-D array
point_in_polygon
    even-odd containment test
ou_path
    Euler-Maruyama integration of independent complex OU modes
"""
import os
from types import ModuleType

from . import _fallback

_NAMES = ("local_minima", "marching_squares", "point_in_polygon", "ou_path")


def _load_compiled():
    if os.environ.get("PROBEDDY_PURE_PYTHON", "").strip() not in ("", "0"):
        return None
    try:
        from . import _ckernels
    except ImportError:
        return None
    return _ckernels


_compiled = _load_compiled()
BACKEND = "cython" if _compiled is not None else "python"
_impl: ModuleType = _compiled if _compiled is not None else _fallback

local_minima = _impl.local_minima
marching_squares = _impl.marching_squares
point_in_polygon = _impl.point_in_polygon
ou_path = _impl.ou_path


def get_backend(name):
    """Return the kernel module for ``"cython"`` or ``"python"``."""
    if name == "python":
        return _fallback
    if name == "cython":
        if _compiled is None:
            raise ImportError("compiled kernels are not built")
        return _compiled
    raise ValueError(f"unknown backend {name!r}")


def available_backends():
    return ["python"] + (["cython"] if _compiled is not None else [])

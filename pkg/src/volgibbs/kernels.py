"""Kernel backend selection.

The compiled extension is used when importable; setting the environment
variable ``VOLGIBBS_PURE_PYTHON=1`` forces the numpy fallback.
"""
import os

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("VOLGIBBS_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl  # noqa: F811
        BACKEND = "cython"
    except ImportError:
        pass

OK = _pykernels.OK
BAD_SHIFTED_RATE = _pykernels.BAD_SHIFTED_RATE
BAD_XHAT = _pykernels.BAD_XHAT


def get_backend(name=None):
    """Return a kernel module by name ("cython", "python") or the active one."""
    if name is None:
        return _impl
    if name == "python":
        return _pykernels
    if name == "cython":
        from . import _ckernels
        return _ckernels
    raise ValueError(f"unknown kernel backend {name!r}")


def normal_vol(*args, **kw):
    return _impl.normal_vol(*args, **kw)


def sabr_paths(*args, **kw):
    return _impl.sabr_paths(*args, **kw)

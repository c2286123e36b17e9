"""Sweep kernel selection: compiled core when available, numpy fallback.

The environment variable OTFSDET_BACKEND (values: "cython", "python")
overrides the automatic choice; get_sweep also takes an explicit name for
per-call control (benchmarks, parity tests).
"""

import os

from . import _mfic_py
from .errors import InvalidArgumentError

try:
    from . import _mfic_cy
except ImportError:
    _mfic_cy = None

_BACKENDS = {"python": _mfic_py.sweep}
if _mfic_cy is not None:
    _BACKENDS["cython"] = _mfic_cy.sweep


def available_backends():
    return tuple(sorted(_BACKENDS))


def default_backend() -> str:
    env = os.environ.get("OTFSDET_BACKEND")
    if env:
        if env not in _BACKENDS:
            raise InvalidArgumentError(
                f"OTFSDET_BACKEND={env!r} not available; have {available_backends()}"
            )
        return env
    return "cython" if "cython" in _BACKENDS else "python"


def get_sweep(backend=None):
    """Resolve a sweep callable; backend None means the default choice."""
    name = backend or default_backend()
    if name not in _BACKENDS:
        raise InvalidArgumentError(
            f"unknown kernel backend {name!r}; have {available_backends()}"
        )
    return _BACKENDS[name]

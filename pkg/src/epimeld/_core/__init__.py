"""Numerical kernels with a compiled fast path and a numpy fallback.

The Cython extension ``_speedups`` is preferred when it imported cleanly;
otherwise the pure-numpy ``fallback`` module serves the same API. Override
with the environment variable ``EPIMELD_BACKEND``:

* ``python``   always use the numpy implementation
* ``compiled`` require the extension, raise ImportError if it is missing

Both backends are deterministic for a given input and thread count has no
effect on results; cross-backend agreement is close but not bitwise (the
summation orders differ), see the backend parity tests for the tolerances.
"""

import os

from . import fallback
from .fallback import RHO_CLAMP

__all__ = [
    "RHO_CLAMP",
    "active_backend",
    "get_backend",
    "integrated_loglik_batch",
    "simulate_batch",
    "simulate_steps",
]

_requested = os.environ.get("EPIMELD_BACKEND", "").strip().lower()
if _requested not in ("", "python", "compiled"):
    raise ValueError(
        f"EPIMELD_BACKEND must be 'python' or 'compiled', got {_requested!r}"
    )

_impl = fallback
_name = "python"
if _requested in ("", "compiled"):
    try:
        from . import _speedups as _compiled
    except ImportError:
        if _requested == "compiled":
            raise
    else:
        _impl = _compiled
        _name = "compiled"


def active_backend():
    """Name of the backend in use: 'compiled' or 'python'."""
    return _name


def get_backend(name):
    """Return the named backend module ('python' or 'compiled').

    Used by the parity tests and the benchmark; raises ImportError when the
    compiled extension is requested but was not built.
    """
    if name == "python":
        return fallback
    if name == "compiled":
        from . import _speedups

        return _speedups
    raise ValueError(f"unknown backend {name!r}")


def simulate_steps(*args, **kwargs):
    return _impl.simulate_steps(*args, **kwargs)


def simulate_batch(*args, **kwargs):
    return _impl.simulate_batch(*args, **kwargs)


def integrated_loglik_batch(*args, **kwargs):
    return _impl.integrated_loglik_batch(*args, **kwargs)

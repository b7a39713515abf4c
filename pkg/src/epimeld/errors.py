"""Exception hierarchy shared across the package.

The CLI maps these to distinct exit codes so scripts can tell failure
classes apart: data problems, configuration problems, and inference
problems each get their own code.
"""

__all__ = ["ConfigError", "DataError", "InferenceError", "QuadratureError"]


class DataError(Exception):
    """Malformed or inconsistent input data (dataset files, posterior files)."""


class ConfigError(Exception):
    """Invalid configuration: unknown keys, bad values, violated invariants."""


class InferenceError(Exception):
    """The fit or a downstream computation could not produce a result."""


class QuadratureError(InferenceError):
    """Adaptive quadrature failed to reach the requested tolerance."""

"""Shared exception types.

The CLI maps these onto its exit-code contract: configuration problems
exit 2, data problems exit 3, numeric failures 4, oracle gate failures 5.
"""


class ConfigError(ValueError):
    """Bad flags, malformed config files, or violated run preconditions."""


class DataError(ValueError):
    """Malformed datasets, images, manifests, or checkpoints."""


class NumericsError(RuntimeError):
    """NaN/Inf surfaced during computation, or a numerically invalid input."""


class OracleGateError(RuntimeError):
    """Evaluation oracles failed their quality gate and refuse to run."""

"""Exception hierarchy. ConfigError maps to CLI exit code 2, everything else to 1."""


class StreetwiseError(Exception):
    """Base class for all package errors."""


class ConfigError(StreetwiseError):
    """Bad configuration: unknown names, dimension mismatches, illegal parameter ranges."""


class ContractError(StreetwiseError):
    """A call violated an operation precondition (wrong shapes, NaN inputs, unpaired seeds)."""


class NumericError(StreetwiseError):
    """Non-finite value encountered during numeric computation."""


class ModelLoadError(StreetwiseError):
    """Serialized model/dataset stream is truncated, corrupt, or has a wrong version."""


class DegenerateClusterError(StreetwiseError):
    """Clustering collapsed: coincident centroids or all-identical points."""


class TrainingDiverged(StreetwiseError):
    """Training loss became non-finite; carries step diagnostics in the message."""

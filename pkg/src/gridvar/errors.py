"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, DataError -> 3,
NumericalError -> 4.
"""


class GridVarError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(GridVarError):
    """Invalid configuration: bad grid/stencil/solver settings or config file."""


class DataError(GridVarError):
    """Invalid or insufficient input data (missing values, bad dimensions)."""


class NumericalError(GridVarError):
    """A numerical routine failed (singular matrix, non-convergence)."""


class UnstableModelError(NumericalError):
    """A transition matrix failed the stability requirement."""

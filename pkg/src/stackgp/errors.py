"""Exception hierarchy shared across the package.

Each class maps to one CLI exit code so failures stay machine-parsable:
config problems exit 2, data problems exit 3, numerical failures exit 4.
"""


class StackGpError(Exception):
    """Base class for all package errors."""

    category = "internal"
    exit_code = 1


class ConfigError(StackGpError):
    """Run configuration is malformed or inconsistent."""

    category = "config"
    exit_code = 2


class DataError(StackGpError):
    """Input data violates a documented precondition."""

    category = "data"
    exit_code = 3


class SchemaError(DataError):
    """Column layout or file schema mismatch."""

    category = "schema"


class NumericalError(StackGpError):
    """A numerical routine failed beyond recovery (e.g. Cholesky after jitter)."""

    category = "numerical"
    exit_code = 4

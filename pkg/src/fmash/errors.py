"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes: usage problems exit 1, data/schema
problems exit 2, numeric failures exit 3.
"""


class FmashError(Exception):
    """Base class for all package errors."""


class SchemaError(FmashError):
    """Malformed or inconsistent input data (files, records, vocabularies)."""


class ConfigError(FmashError):
    """Invalid run configuration (bad key, bad type, bad value)."""


class DataError(FmashError):
    """A dataset that cannot support the requested operation."""


class NumericError(FmashError):
    """Non-finite values or a numerically failed computation."""

"""Exception types shared across the package."""


class DataError(ValueError):
    """Malformed or inconsistent input data (files, tables, schemas)."""


class NumericalError(RuntimeError):
    """Training or evaluation produced values that cannot be recovered from."""

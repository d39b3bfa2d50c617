"""Error types mapped to CLI exit codes."""


class UsageError(Exception):
    """Bad command line, flags, or config values (exit code 1)."""


class DataError(Exception):
    """Malformed or inconsistent dataset inputs (exit code 2)."""


class NumericalError(Exception):
    """Non-finite values encountered during optimization (exit code 3)."""

"""Exception types shared across the library and mapped to CLI exit codes."""


class CunsbError(Exception):
    """Base class for errors raised by this package."""


class UsageError(CunsbError):
    """Bad command line arguments or malformed config file (exit code 1)."""


class DataError(CunsbError):
    """Missing, unreadable, or structurally invalid input data (exit code 2)."""


class CheckpointError(CunsbError):
    """Missing, corrupt, or incompatible checkpoint (exit code 3)."""

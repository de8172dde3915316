"""Exception hierarchy shared across the package.

Each class carries the process exit code used by the command-line front
end: 2 for usage problems, 3 for bad input data, 4 for violated internal
invariants.
"""


class TuSearchError(Exception):
    """Base class for every error raised by this package."""

    exit_code = 1


class UsageError(TuSearchError):
    """Invalid parameters or malformed command-line usage."""

    exit_code = 2


class DataError(TuSearchError):
    """Malformed or inconsistent input data (manifests, payloads, bundles)."""

    exit_code = 3


class InvariantError(TuSearchError):
    """An internal consistency check failed; indicates a bug, not bad input."""

    exit_code = 4

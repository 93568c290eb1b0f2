"""Shared exception base for the toolkit.

Every domain error raised by usvkit derives from UsvkitError so callers
(CLI, HTTP layer) can map "domain problem" vs "programming/IO problem"
to exit codes and status codes in one place.
"""


class UsvkitError(Exception):
    """Base class for all domain errors raised by usvkit modules."""

"""Exception types shared across the package."""


class DataError(Exception):
    """Malformed input files or inconsistent scene data."""


class TrackingError(Exception):
    """A tracker query could not be answered for this superpoint."""


class InvariantViolation(Exception):
    """An internal consistency check failed; indicates a bug."""

"""Exception types shared across the package."""


class DataFormatError(ValueError):
    """A data file has the wrong shape or an unparseable field."""


class OrderingError(ValueError):
    """Timestamps are not strictly increasing."""


class InvariantError(ValueError):
    """A domain object violates one of its structural invariants."""


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""

"""Exception hierarchy shared across the package."""


class IdcnnError(Exception):
    """Base class for all package errors."""


class ContractError(IdcnnError, ValueError):
    """An operation was called with arguments violating its preconditions."""


class FormatError(IdcnnError, ValueError):
    """A file could not be parsed (netpbm image, checkpoint, patch cache)."""


class NoReferencePixelsError(IdcnnError, ValueError):
    """Restoration found no clean pixel to average from."""

"""Shared exception types."""


class ConfLedgerError(Exception):
    """Base class for all errors raised by this package."""


class CanonicalError(ConfLedgerError, ValueError):
    """A value cannot be canonically encoded or decoded."""

"""Shared exception types.

Every precondition failure raises :class:`ContractViolation`, every NaN/Inf
escape raises :class:`NumericFailure`, malformed binary inputs raise
:class:`FormatError`, and bad config files raise :class:`ConfigError`.
Keeping them in one place lets callers catch the whole family via
:class:`DmiaError`.
"""

from __future__ import annotations


class DmiaError(Exception):
    """Base class for all errors raised by this package."""


class ContractViolation(DmiaError, ValueError):
    """An operation was called outside its documented precondition."""


class NumericFailure(DmiaError, FloatingPointError):
    """A NaN or Inf appeared where finite values are guaranteed.

    ``op`` names the operation that produced the bad value.
    """

    def __init__(self, message: str, op: str | None = None):
        super().__init__(message)
        self.op = op


class FormatError(DmiaError, ValueError):
    """A binary dataset file does not match its documented layout.

    ``offset`` is the byte offset of the first inconsistency when known.
    """

    def __init__(self, message: str, offset: int | None = None):
        super().__init__(message)
        self.offset = offset


class ConfigError(DmiaError, ValueError):
    """A config file or CLI argument could not be interpreted."""

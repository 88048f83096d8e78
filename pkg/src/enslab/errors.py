"""Exception hierarchy shared by every simulator component."""

from __future__ import annotations


class EnsError(Exception):
    """Base class for all simulator errors."""


# world model
class NotPresent(EnsError):
    pass


class BeforeServiceStart(EnsError):
    pass


class TraceSchemaError(EnsError):
    pass


# crypto
class BadLength(EnsError):
    pass


# ROBERT
class AlreadyRegistered(EnsError):
    pass


class UnknownId(EnsError):
    pass


class ScheduleGap(EnsError):
    pass


class StaleTimestamp(EnsError):
    pass


class UnknownEmitter(EnsError):
    pass


class EpochMismatch(EnsError):
    pass


class BadMac(EnsError):
    pass


class DropRecord(EnsError):
    pass


class TokenError(EnsError):
    """Batch-level rejection of an upload authorisation token."""


class InvalidToken(TokenError):
    pass


class TokenExpired(TokenError):
    pass


class TokenReused(TokenError):
    pass


# GAEN / DP3T
class OneTekPerDay(EnsError):
    pass


class TooManyKeys(EnsError):
    pass


class NoAuthorisation(EnsError):
    pass


class BadSignature(EnsError):
    pass


class StaleCode(EnsError):
    pass


class CommitmentMismatch(EnsError):
    pass


# CWA
class GuidAlreadyUsed(EnsError):
    pass


class UnknownToken(EnsError):
    pass


class TanAlreadyIssued(EnsError):
    pass


class NotPositive(EnsError):
    pass


class InvalidTan(EnsError):
    pass


class TanReused(EnsError):
    pass


class DuplicateKeyDay(EnsError):
    pass


# adversary / checker / harness
class InvalidCapability(EnsError):
    pass


class NotKnown(EnsError):
    """The adversary tried to use a value outside its knowledge."""


class UnclassifiedViolation(EnsError):
    pass


class UnknownScenario(EnsError):
    pass

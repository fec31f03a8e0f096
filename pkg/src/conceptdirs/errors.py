"""Exception hierarchy.

Every failure raised by the toolkit derives from :class:`ConceptDirsError`.
The three intermediate classes map onto CLI exit codes.
"""

from __future__ import annotations


class ConceptDirsError(Exception):
    exit_code = 1


class ConfigError(ConceptDirsError):
    exit_code = 2


class DataError(ConceptDirsError):
    exit_code = 3


class NumericError(ConceptDirsError):
    exit_code = 4


# --- file formats -----------------------------------------------------------

class IoFailure(DataError):
    def __init__(self, path, cause):
        super().__init__(f"{path}: {cause}")
        self.path = str(path)
        self.cause = cause


class BadMagic(DataError):
    pass


class UnsupportedVersion(DataError):
    pass


class ShapeMismatch(DataError):
    def __init__(self, message, expected=None, actual=None):
        super().__init__(message)
        self.expected = expected
        self.actual = actual


class NonFiniteValue(DataError):
    def __init__(self, message, row):
        super().__init__(message)
        self.row = row


class DuplicateId(DataError):
    pass


class FormatError(DataError):
    """Malformed text record (manifest, probability table, fixture)."""

    def __init__(self, message, line=None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


class DuplicatePair(FormatError):
    pass


class ClassEqualsTarget(FormatError):
    pass


class UnresolvedId(DataError):
    def __init__(self, sample_id, where=""):
        msg = f"unresolved id {sample_id!r}" + (f" in {where}" if where else "")
        super().__init__(msg)
        self.sample_id = sample_id


class EmptyManifest(DataError):
    pass


# --- shapes and labels ------------------------------------------------------

class DimMismatch(DataError):
    pass


class IdMismatch(DataError):
    pass


class UnknownTarget(DataError):
    pass


class EmptyConceptList(DataError):
    pass


class EmptyGradients(DataError):
    pass


class KMismatch(DataError):
    pass


# --- numerics ---------------------------------------------------------------

class AllRowsDegenerate(NumericError):
    pass


class TooFewPoints(NumericError):
    pass


class DegenerateMean(NumericError):
    pass


class SingleCluster(NumericError):
    pass


class SingleDirection(NumericError):
    pass


class TooFewSamples(NumericError):
    pass


class NotPSD(NumericError):
    pass


class DegenerateData(NumericError):
    pass


class DegenerateDataWarning(UserWarning):
    pass


class InsufficientNegatives(NumericError):
    pass


class KExceedsD(ConfigError):
    pass


class InstanceTooLarge(ConfigError):
    pass


class PipelineStageError(ConceptDirsError):
    """Wraps a module error with the pipeline stage it occurred in."""

    def __init__(self, stage, cause):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 1)

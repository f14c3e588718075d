"""Exception hierarchy shared by every pipeline stage."""

from __future__ import annotations


class SemaugError(Exception):
    """Base class for all pipeline errors."""


class ValidationError(SemaugError, ValueError):
    """Invalid configuration or precondition violation."""


# dataset
class MissingRoot(SemaugError, FileNotFoundError):
    pass


class EmptyDataset(SemaugError):
    pass


class SchemaMismatch(SemaugError):
    pass


class ManifestIOError(SemaugError, OSError):
    pass


# backends
class BackendFailure(SemaugError):
    pass


class UnsupportedMode(ValidationError):
    pass


class MissingImage(ValidationError):
    pass


class BadNoiseRate(ValidationError):
    pass


class EmptyText(ValidationError):
    pass


class UnknownBackend(ValidationError, KeyError):
    pass


# captioning / prompting
class EmptySet(ValidationError):
    pass


class EmptyLabel(ValidationError):
    pass


class MissingCaption(ValidationError):
    pass


class SpanMismatch(ValidationError):
    pass


class OutOfRange(ValidationError):
    pass


# generation
class EmptyPrompt(ValidationError):
    pass


class DimensionMismatch(SemaugError):
    pass


# filters / evaluation
class MissingOriginal(SemaugError, KeyError):
    pass


class IncompleteGroup(SemaugError):
    pass


class NoCommonRecords(SemaugError):
    pass


# baselines
class DegenerateImage(ValidationError):
    pass


# trainer
class SingleClass(ValidationError):
    pass


class EmptySplit(ValidationError):
    pass

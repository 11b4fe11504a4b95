"""Exception types shared across the pipeline."""


class PredbiasError(Exception):
    """Base class for all errors raised by this package."""


class DatasetFormatError(PredbiasError):
    """A dataset / prediction / matrix file violates its schema."""

    def __init__(self, message, path=None, line=None):
        loc = ""
        if path is not None:
            loc += f"{path}"
        if line is not None:
            loc += f":{line}"
        super().__init__(f"{loc}: {message}" if loc else message)
        self.path = path
        self.line = line


class VocabularyError(PredbiasError):
    """A label is missing from (or inconsistent with) a vocabulary."""


class CoverageError(PredbiasError):
    """A prediction or embedding file does not cover required samples."""


class ValidationError(PredbiasError):
    """An argument violates a documented precondition."""


class DegenerateBatchError(PredbiasError):
    """Every anchor in a batch lacks a same-predicate positive."""


class NumericalError(PredbiasError):
    """A computation produced a non-finite value."""


class ClassNeverSeenError(PredbiasError):
    """A predicate class has a zero prototype (no samples ever observed)."""


class PlanError(PredbiasError):
    """A transfer plan is inconsistent with the dataset it is applied to."""


class MissingArtifactError(PredbiasError):
    """A pipeline stage requires a file another stage has not produced."""

    def __init__(self, path):
        super().__init__(f"missing upstream artifact: {path}")
        self.path = path


class StageError(PredbiasError):
    """Wraps a failure inside a named pipeline stage."""

    def __init__(self, stage, cause):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause

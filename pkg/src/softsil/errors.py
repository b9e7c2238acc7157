"""Exception hierarchy shared across the package."""


class SoftsilError(Exception):
    """Base class for all package-specific errors."""


class DegenerateInput(SoftsilError):
    """An input is structurally empty or numerically degenerate (e.g. zero row)."""


class InvalidParameter(SoftsilError):
    """A scalar parameter is outside its valid range (e.g. temperature <= 0)."""


class ShapeError(SoftsilError):
    """Matrix shapes do not conform."""


class NumericalFailure(SoftsilError):
    """A computation produced non-finite values."""


class PreconditionViolation(SoftsilError):
    """A documented precondition was not met by the caller."""


class SingletonClass(SoftsilError):
    """A sample has no other same-class sample in the batch."""


class SingleClassBatch(SoftsilError):
    """The batch contains only one class; inter-class terms are undefined."""


class InvalidLabel(SoftsilError):
    """A class label is outside [0, num_classes)."""


class InvalidConfiguration(SoftsilError):
    """A run configuration is inconsistent or incomplete."""


class InvalidState(SoftsilError):
    """An object is used outside its valid lifecycle (e.g. stale tape)."""


class InsufficientClassSamples(SoftsilError):
    """A class has fewer samples than the sampler needs without replacement."""


class MalformedRecord(SoftsilError):
    """A binary dataset file does not match the expected record layout."""


class TruncatedPayload(SoftsilError):
    """A checkpoint file ended before its declared payload."""


class CheckpointFormatError(SoftsilError):
    """A checkpoint file has a bad magic tag, version, or header."""


class SchemaMismatch(SoftsilError):
    """Run artifacts with incompatible schema versions were mixed."""


class NoData(SoftsilError):
    """An input file contains no usable rows."""

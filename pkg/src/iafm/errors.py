"""Exception and warning types shared across the package."""


class IafmError(Exception):
    """Base class for all package errors."""


class ValidationError(IafmError):
    """A record violates a domain invariant. ``field`` names the offender."""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class EmptyId(ValidationError):
    pass


class NegativeTimestamp(ValidationError):
    pass


class UnknownExerciseType(ValidationError):
    pass


class MalformedRow(IafmError):
    """A data row could not be parsed. ``line`` is the 1-based line number."""

    def __init__(self, message, line):
        super().__init__(f"line {line}: {message}")
        self.line = line


class SchemaMismatch(IafmError):
    """Input header/keys do not match the documented schema."""

    def __init__(self, message, missing=()):
        super().__init__(message)
        self.missing = tuple(missing)


class DecodeError(IafmError):
    """Input stream is not valid UTF-8."""


class EmptyDataset(IafmError):
    """Filtering removed every row."""


class EmptyInput(IafmError):
    """An operation requiring data received none."""


class UnknownFactorLevel(IafmError):
    """A factor label is absent from the levels the design was built on."""


class UnknownStudent(IafmError):
    """BLUP requested for a student the fit has never seen."""


class InnerDivergence(IafmError):
    """The per-student mode search exceeded its iteration budget."""

    def __init__(self, student_id, iterations):
        super().__init__(
            f"inner mode search for student {student_id!r} did not reach "
            f"tolerance in {iterations} iterations"
        )
        self.student_id = student_id


class OracleTooLarge(IafmError):
    """The quadrature oracle is capped to small instances."""


class NotConverged(IafmError):
    """Outer optimization stopped above tolerance (result still available)."""

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class ArityMismatch(IafmError):
    """A report received the wrong number of fits."""


class MissingModels(IafmError):
    """A factor report needs fits that were not supplied."""


class SeparationWarning(UserWarning):
    """A fixed effect is large enough to suggest (quasi-)separation."""

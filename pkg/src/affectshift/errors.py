"""Exception hierarchy shared across the package."""


class AffectShiftError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(AffectShiftError, ValueError):
    """Input data failed a domain check. Maps to CLI exit code 2."""

    def __init__(self, message, *, line=None, field=None):
        self.line = line
        self.field = field
        prefix = ""
        if line is not None:
            prefix += f"line {line}: "
        if field is not None:
            prefix += f"{field}: "
        super().__init__(prefix + message)

    def at_line(self, line):
        """Attach a source line to an error raised without one; keeps the subclass."""
        if self.line is None:
            self.line = line
            self.args = (f"line {line}: {self.args[0]}",) + self.args[1:]
        return self


class OutOfRange(ValidationError):
    def __init__(self, axis, value):
        self.axis = axis
        self.value = value
        super().__init__(f"{axis}={value!r} outside [-3, 3]", field=axis)


class NotFinite(ValidationError):
    def __init__(self, what, value=None):
        self.what = what
        super().__init__(f"non-finite value {value!r}", field=what)


class UnknownEmotion(ValidationError, KeyError):
    def __init__(self, name, available):
        self.name = name
        self.available = sorted(available)
        ValidationError.__init__(
            self, f"unknown emotion {name!r}; available: {', '.join(self.available)}"
        )

    def __str__(self):
        return self.args[0]


class ParseError(ValidationError):
    pass


class ShapeMismatch(ValidationError):
    pass


class ConfigMismatch(ValidationError):
    pass


class EmptySamples(ValidationError):
    pass


class EmptyBatch(ValidationError):
    pass


class LengthMismatch(ValidationError):
    pass


class DegenerateRanking(ValidationError):
    pass


class TooFewItems(ValidationError):
    pass


class TooFewPairs(ValidationError):
    pass


class AllZeroDifferences(ValidationError):
    pass


class CorruptCheckpoint(AffectShiftError):
    pass


class CacheCorruption(AffectShiftError):
    pass


class EncoderFailure(AffectShiftError):
    pass


class BackendFailure(AffectShiftError):
    pass


class SinkFailure(AffectShiftError):
    pass


class MissingPort(AffectShiftError):
    """A metric was requested without a model backing it."""


class NonFiniteLoss(AffectShiftError):
    def __init__(self, step, batch_ids, value):
        self.step = step
        self.batch_ids = list(batch_ids)
        self.value = value
        super().__init__(
            f"non-finite loss {value!r} at step {step}; batch sample ids: {self.batch_ids}"
        )

"""Exception hierarchy shared by all modules."""


class FlangeCalError(Exception):
    """Base class for every error raised by flangecal."""


class InsufficientPoints(FlangeCalError, ValueError):
    pass


class DegenerateSample(FlangeCalError, ValueError):
    pass


class NoModelFound(FlangeCalError):
    pass


class SegmentationFailed(FlangeCalError):
    pass


class DegenerateConfiguration(FlangeCalError, ValueError):
    pass


class RegistrationFailed(FlangeCalError):
    pass


class StreamExhausted(FlangeCalError):
    pass


class CannotCompensate(FlangeCalError):
    pass


class ContactLost(FlangeCalError):
    pass


class KinematicSingularity(FlangeCalError):
    pass


class NeverEngaged(FlangeCalError):
    pass


class ParseError(FlangeCalError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class UnitMismatch(FlangeCalError, ValueError):
    pass


class SchemaError(FlangeCalError, ValueError):
    pass

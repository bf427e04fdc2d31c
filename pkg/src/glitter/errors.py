class GlitterError(Exception):
    """Base class for errors raised by this package."""


class ParseError(GlitterError):
    pass


class SchemaError(GlitterError):
    pass


class SamplingError(GlitterError):
    pass


class NumericalError(GlitterError, ArithmeticError):
    pass


class TrainingError(GlitterError):
    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace

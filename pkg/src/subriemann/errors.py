"""Exception hierarchy.

Input problems (bad text, bad files, bad arguments) derive from ``InputError``;
failures of a numerical procedure derive from ``NumericError``.  The CLI maps
the two families onto distinct exit codes.
"""


class SubRiemannError(Exception):
    pass


class InputError(SubRiemannError, ValueError):
    pass


class ParseError(InputError):
    """Malformed expression or bracket text; ``pos`` is the 0-based offset."""

    def __init__(self, message, pos=None, text=None):
        self.pos = pos
        self.text = text
        if pos is not None:
            message = f"{message} (at position {pos})"
        super().__init__(message)


class NumericError(SubRiemannError):
    pass


class DomainError(NumericError, ArithmeticError):
    """An expression was evaluated outside its domain (log of t<=0, 1/0, ...)."""


class DomainExit(NumericError):
    """An integrated curve left the geometry's domain box or became non-finite."""

    def __init__(self, message, point=None):
        self.point = point
        super().__init__(message)


class NotBracketGenerating(NumericError):
    def __init__(self, message, growth=None):
        self.growth = growth
        super().__init__(message)


class ConvergenceError(NumericError):
    pass


class SteeringError(NumericError):
    def __init__(self, message, residual=None):
        self.residual = residual
        super().__init__(message)

"""
Exception hierarchy shared by the services and the command line
"""


class ToolkitError(Exception):
    """Base error; carries a CLI exit code and structured details"""

    exit_code = 1

    def __init__(self, message, **details):
        super().__init__(message)
        self.message = message
        self.details = details

    def to_record(self):
        """Machine-readable form printed by the CLI on failure"""
        return {
            "error": type(self).__name__,
            "code": self.exit_code,
            "message": self.message,
            "details": self.details,
        }


class InvariantViolationError(ToolkitError):
    exit_code = 2


class NumericError(ToolkitError):
    exit_code = 3


class NumericDivergenceError(NumericError):
    exit_code = 4


class ConstraintInfeasibleError(ToolkitError):
    exit_code = 5


class DegenerateModelError(ToolkitError):
    exit_code = 6


class FormatInfeasibilityError(ToolkitError):
    """Raised when a matrix has nonzeros outside its structured mask"""

    exit_code = 7

    def __init__(self, message, coordinates=()):
        coordinates = [tuple(int(v) for v in c) for c in coordinates]
        super().__init__(message, coordinates=coordinates[:64], count=len(coordinates))
        self.coordinates = coordinates


class CorruptionError(ToolkitError):
    exit_code = 8


class ParseError(ToolkitError):
    """Binary parse failure at a byte offset"""

    exit_code = 9

    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte {offset})", offset=offset)
        self.offset = offset


class BadMagicError(ParseError):
    pass


class BadVersionError(ParseError):
    pass


class TruncationError(ParseError):
    pass


class MissingFileError(ToolkitError):
    exit_code = 10


class ConfigError(ToolkitError):
    exit_code = 11


class ScheduleMismatchError(ToolkitError):
    exit_code = 12


class TuningError(ToolkitError):
    exit_code = 13


class VerificationError(ToolkitError):
    exit_code = 14

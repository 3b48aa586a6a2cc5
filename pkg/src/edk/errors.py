"""Exception hierarchy. Each top-level class carries the CLI exit code."""


class EDKError(Exception):
    exit_code = 1


class ConfigError(EDKError):
    exit_code = 2


class DataError(EDKError):
    exit_code = 3


class ParseError(DataError):
    def __init__(self, row: int, message: str):
        super().__init__(f"row {row}: {message}")
        self.row = row


class BatchCompositionError(DataError):
    """A batch lacks one of the two labels."""


class MetricError(DataError, ValueError):
    pass


class FieldLookupError(DataError, IndexError):
    pass


class ShapeError(EDKError, ValueError):
    exit_code = 4


class NumericError(EDKError, ArithmeticError):
    exit_code = 4


class TrainingError(NumericError):
    def __init__(self, step: int, message: str):
        super().__init__(f"step {step}: {message}")
        self.step = step

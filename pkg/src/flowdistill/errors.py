"""Exception hierarchy shared by every module."""


class FlowError(Exception):
    """Base class for all errors raised by flowdistill."""


class ShapeError(FlowError, ValueError):
    pass


class ContractError(FlowError, RuntimeError):
    """An operation was called outside its documented preconditions."""


class ConfigError(FlowError, ValueError):
    def __init__(self, message, field=None):
        super().__init__(message if field is None else f"{field}: {message}")
        self.field = field


class SingularError(FlowError, ArithmeticError):
    pass


class NumericalInstabilityError(FlowError, ArithmeticError):
    pass


class DataError(FlowError, ValueError):
    pass


class DegenerateDataError(DataError):
    pass


class DegenerateInterpolantError(FlowError, ValueError):
    pass


class ParseError(DataError):
    def __init__(self, message, row=None, column=None):
        super().__init__(f"{message} (row {row}, column {column})")
        self.row = row
        self.column = column


class DivergenceError(FlowError, RuntimeError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class CheckpointError(FlowError, IOError):
    pass

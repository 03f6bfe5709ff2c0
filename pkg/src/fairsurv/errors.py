"""Exception hierarchy.

Every error carries an ``exit_code`` so the command line can map failures
onto the documented convention (2 validation/config, 3 I/O, 4 numeric).
"""


class FairSurvError(Exception):
    exit_code = 2


class SchemaError(FairSurvError):
    """A column named by the schema is missing or roles are inconsistent."""


class ParseError(FairSurvError):
    """A cell could not be parsed as a number."""


class ValidationError(FairSurvError):
    """A value is outside its documented domain."""


class SizeError(FairSurvError):
    """A split part would be empty although its ratio is positive."""


class CalibrationError(FairSurvError):
    exit_code = 4


class ShapeError(FairSurvError, ValueError):
    pass


class UndefinedObjectiveError(FairSurvError):
    """The objective has no terms, e.g. Cox loss without any event."""


class NumericError(FairSurvError, ArithmeticError):
    exit_code = 4


class DivergenceError(NumericError):
    def __init__(self, epoch, component, value):
        self.epoch = epoch
        self.component = component
        self.value = value
        super().__init__(f"non-finite {component} loss at epoch {epoch}: {value}")


class DisparityUndefinedError(FairSurvError):
    pass

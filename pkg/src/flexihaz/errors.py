"""Exception hierarchy.

Each failure class maps to a distinct CLI exit code.
"""


class FlexiHazError(Exception):
    exit_code = 1


class ConfigurationError(FlexiHazError, ValueError):
    exit_code = 2


class ShapeError(FlexiHazError, ValueError):
    exit_code = 2


class IngestionError(FlexiHazError, ValueError):
    exit_code = 3


class NumericalError(FlexiHazError, ArithmeticError):
    exit_code = 4


class TrainingError(NumericalError):
    pass


class EstimationError(FlexiHazError):
    exit_code = 5


class InferenceError(FlexiHazError):
    exit_code = 6

"""Exception hierarchy shared by all modules.

The CLI maps these onto exit codes: validation problems exit with 2,
numerical failures with 3 and missing inputs with 4.
"""


class NLSTrapError(Exception):
    exit_code = 1


class ValidationError(NLSTrapError, ValueError):
    exit_code = 2


class GridMismatch(ValidationError):
    pass


class NumericalFailure(NLSTrapError, ArithmeticError):
    exit_code = 3

    def __init__(self, message, last_good=None):
        super().__init__(message)
        self.last_good = last_good


class NoBoundState(NumericalFailure):
    """The discretized operator has no negative eigenvalue."""


class NewtonDivergence(NumericalFailure):
    def __init__(self, message, residual=float("nan"), last_good=None):
        super().__init__(message, last_good=last_good)
        self.residual = residual


class BranchRadiusExceeded(ValidationError):
    pass


class OutsideSmallDataRadius(ValidationError):
    pass


class ResonantPotential(NumericalFailure):
    pass


class MissingInput(NLSTrapError, FileNotFoundError):
    exit_code = 4

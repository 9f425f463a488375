class ShapeError(ValueError):
    """Operand shapes do not conform for the requested operation."""


class NumericalError(ArithmeticError):
    """A computation produced NaN or otherwise failed numerically.

    ``iteration`` carries the step at which the failure was detected when
    the computation is iterative (Sinkhorn iterations, training steps).
    """

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class ConvergenceError(NumericalError):
    def __init__(self, message, iteration=None, violation=None):
        super().__init__(message, iteration)
        self.violation = violation


class InfeasibleError(ValueError):
    """Marginals or constraints admit no feasible plan."""


class ConfigError(ValueError):
    pass

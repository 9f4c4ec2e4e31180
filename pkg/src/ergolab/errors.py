"""Exception types raised across the package."""


class ErgolabError(Exception):
    pass


class ModelEvaluationError(ErgolabError):
    """Drift or diffusion returned a non-finite value (or a degenerate matrix)."""

    def __init__(self, message, x=None, u=None):
        super().__init__(message)
        self.x = x
        self.u = u


class ControlError(ErgolabError):
    pass


class ExplosionError(ErgolabError):
    """A simulated state left the explosion bound."""

    def __init__(self, message, time_index, path_index=0):
        super().__init__(message)
        self.time_index = time_index
        self.path_index = path_index


class DomainError(ErgolabError, ValueError):
    pass


class DriftCheckError(ErgolabError):
    def __init__(self, message, point=None, index=None):
        super().__init__(message)
        self.point = point
        self.index = index


class GridTooSmallError(ErgolabError):
    pass


class InfCompactnessError(ErgolabError):
    pass


class PreconditionError(ErgolabError):
    """A verification step required before a Monte Carlo comparison did not pass."""


class EstimationError(ErgolabError):
    pass


class InsufficientCyclesError(ErgolabError):
    pass


class ExpressionError(ErgolabError, ValueError):
    pass

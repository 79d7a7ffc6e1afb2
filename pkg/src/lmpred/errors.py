"""Exception hierarchy shared by every lmpred module."""


class LmpredError(Exception):
    """Base class for all numerical and contract errors raised by lmpred."""


class ParameterRangeError(LmpredError, ValueError):
    """A model parameter lies outside the admissible range."""


class IllConditionedModelError(LmpredError, ValueError):
    """ARMA polynomial has a root on or too close to the unit circle."""


class DomainError(LmpredError, ValueError):
    """Input outside the mathematical domain of an operation (e.g. frequency 0)."""


class IndexContractError(LmpredError, ValueError):
    """Index preconditions such as ``1 <= k <= K_n <= n`` are violated."""


class SingularCovarianceError(LmpredError, ArithmeticError):
    """A covariance matrix is not positive definite."""


class SingularMatrixError(LmpredError, ArithmeticError):
    """Cholesky failed even after the last-resort ridge."""


class SimulationInfeasibleError(LmpredError, ArithmeticError):
    """No exact sampler could be constructed for the requested covariance."""


class TruncationContractError(LmpredError, ValueError):
    """Not enough history for the requested truncation of an infinite sum."""


class ExperimentError(LmpredError):
    """Experiment configuration rejected or too many replicates excluded."""

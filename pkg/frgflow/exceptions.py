"""frg-flow exceptions"""


class FrgFlowError(Exception):
    """Base exception for all frg-flow errors"""

    def __init__(self, message, details=None):
        super().__init__(message)
        self.details = details if details is not None else {}


class ConfigError(FrgFlowError):
    """Raised when a configuration or argument is invalid"""

    pass


class DomainError(FrgFlowError):
    """Raised when an input lies outside the domain of an operation"""

    pass


class EvaluationError(FrgFlowError):
    """Raised when an integrand overflows; details["x"] holds the offending point"""

    pass


class SamplerError(FrgFlowError):
    """Raised when rejection sampling is too inefficient to be useful"""

    pass


class AssumptionError(FrgFlowError):
    """Raised when a regulator family violates the derivative bound"""

    pass


class ConvergenceError(FrgFlowError):
    """Raised when Newton iteration does not converge; details["trace"] holds the trace"""

    pass


class IllConditionedError(FrgFlowError):
    """Raised when a tilted covariance is numerically singular"""

    pass


class OutsideDomainError(FrgFlowError):
    """Raised when a target point lies outside the numeric interior of the mean domain"""

    pass


class PreconditionError(FrgFlowError):
    """Raised when an operation precondition is violated"""

    pass


class EstimationError(FrgFlowError):
    """Raised when a Monte Carlo estimate cannot be formed"""

    pass


class PropertyViolation(FrgFlowError):
    """Raised when an asserted invariant fails beyond tolerance"""

    pass


class FlowAborted(FrgFlowError):
    """Raised when a flow run stops early; partial records are attached"""

    def __init__(self, message, records, k, details=None):
        super().__init__(message, details)
        self.records = records
        self.k = k

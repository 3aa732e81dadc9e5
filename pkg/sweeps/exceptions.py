class SweepError(Exception):
    """Base class for every error raised by the sweeps package."""


class ProblemDefinitionError(SweepError):
    pass


class DimensionMismatchError(SweepError, ValueError):
    pass


class InvalidConfigurationError(SweepError, ValueError):
    pass


class UnknownProblemError(SweepError, KeyError):
    def __init__(self, name, known=()):
        self.name = name
        self.known = tuple(known)
        super().__init__(f"Unknown problem '{name}'. Known problems: {', '.join(self.known)}")

    def __str__(self):
        return self.args[0]


class NumericalFailure(SweepError):
    """Raised when an integrator, projection or solver cannot produce a result."""


class NonFiniteValueError(NumericalFailure):
    def __init__(self, message, point=None, field=None):
        super().__init__(message)
        self.point = point
        self.field = field


class DegenerateGradientError(NumericalFailure):
    def __init__(self, message, point=None):
        super().__init__(message)
        self.point = point


class ProjectionError(NumericalFailure):
    def __init__(self, message, last_iterate=None, residual=None):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.residual = residual


class NewtonDivergenceError(NumericalFailure):
    def __init__(self, gamma, step, residual):
        super().__init__(
            f"Implicit penalty step diverged (gamma={gamma:g}, step={step}, residual={residual:.3e})"
        )
        self.gamma = gamma
        self.step = step
        self.residual = residual


class CallbackFailureError(NumericalFailure):
    def __init__(self, message, z=None):
        super().__init__(message)
        self.z = z


class AllStartsFailedError(NumericalFailure):
    def __init__(self, statuses):
        self.statuses = list(statuses)
        listing = ', '.join(f"start {i}: {s}" for i, s in enumerate(self.statuses))
        super().__init__(f"No start converged ({listing})")


class CertificateError(SweepError):
    pass


class NotConvergedError(CertificateError):
    pass


class StageIncompleteError(CertificateError):
    pass


class DegenerateNormalizationError(CertificateError):
    pass

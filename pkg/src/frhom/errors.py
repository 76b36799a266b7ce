"""Exception hierarchy shared across the toolkit."""


class HomError(Exception):
    """Base class for all toolkit errors."""


class ConfigurationError(HomError, ValueError):
    """Invalid parameters, grids or configuration objects."""


class NumericalError(HomError, ArithmeticError):
    """A numerical procedure failed to deliver a usable result."""


class QuadratureError(NumericalError):
    """Adaptive quadrature hit its refinement cap before reaching tolerance."""

    def __init__(self, message, achieved_error=float("nan"), value=float("nan")):
        super().__init__(message)
        self.achieved_error = achieved_error
        self.value = value


class SingularConfigurationError(NumericalError):
    """The requested quantity is singular at this configuration."""


class FitError(NumericalError):
    """Curve fit did not converge or produced unphysical parameters."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class EstimationError(NumericalError):
    """Delay estimation failed; subclasses say why."""


class InversionError(EstimationError):
    """Observed count lies outside the invertible range of the dip model."""


class DivergentUncertaintyError(EstimationError):
    """The model slope vanishes at the estimate, so the uncertainty diverges."""


class AmbiguityError(EstimationError):
    """Likelihood maximum sits on the search-interval boundary."""


class CurvatureError(EstimationError):
    """Log-likelihood is not strictly concave at the maximizer."""

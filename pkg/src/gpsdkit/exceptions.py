"""Exception hierarchy shared by all gpsdkit modules."""


class GpsdkitError(Exception):
    """Base class for library errors."""


class DiracFactor(GpsdkitError, ValueError):
    """A Dirac component was queried for a pointwise value."""


class QuadratureNotConverged(GpsdkitError, RuntimeError):
    """Adaptive quadrature error estimate exceeded the requested tolerance."""


class InvalidSamplingTime(GpsdkitError, ValueError):
    pass


class InvalidHyperParameter(GpsdkitError, ValueError):
    pass


class DomainMismatch(GpsdkitError, ValueError):
    """Index type or range disagrees with the kernel's time domain."""


class InvalidFilterPole(GpsdkitError, ValueError):
    pass


class TruncationInsufficient(GpsdkitError, ValueError):
    pass


class UnboundedSupport(GpsdkitError, ValueError):
    pass


class SamplerNotAvailable(GpsdkitError, ValueError):
    pass


class NotPositiveDefinite(GpsdkitError, ArithmeticError):
    pass


class ImaginaryResidue(GpsdkitError, ArithmeticError):
    pass


class OptimizationFailed(GpsdkitError, RuntimeError):
    pass


class InvalidPole(GpsdkitError, ValueError):
    pass


class DivergentModulation(GpsdkitError, ArithmeticError):
    """The exponentially modulated impulse response grows over the horizon."""


class UnstableSystem(GpsdkitError, ArithmeticError):
    pass


class DegenerateTruth(GpsdkitError, ValueError):
    pass

"""Exception and warning types shared across the package."""


class IdealFlowError(Exception):
    """Base class for all package errors."""


class MeanNotZero(IdealFlowError, ValueError):
    """A field that must lie in the mean-zero subspace has a nonzero mean."""


class NotClosed(IdealFlowError):
    """The closure residual of a curvature state exceeds the tolerance."""


class NotInteger(IdealFlowError):
    """Total curvature is not within tolerance of a multiple of 2*pi."""


class NewtonDiverged(IdealFlowError):
    """Closure projection failed; the input has most likely left the chart."""


class ChartSingular(IdealFlowError):
    """The closure Jacobian restricted to the resonant modes is singular."""


class UnderResolved(IdealFlowError):
    """Too much spectral energy sits in the top of the retained band."""


class StepRejected(IdealFlowError):
    """A time step increased the energy beyond the dissipation tolerance."""


class NotConverged(IdealFlowError):
    """An iterative search exhausted its budget."""


class InsufficientData(IdealFlowError, ValueError):
    """Not enough usable points for a fit."""


class UnderResolvedWarning(RuntimeWarning):
    """Emitted by the spectral smoothness monitor."""

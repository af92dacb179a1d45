"""Exception types shared across the package."""


class GenDIDError(Exception):
    """Base class for all errors raised by this package."""


class BalancedPanelError(GenDIDError):
    """Panel is not balanced: a unit-period cell is missing or duplicated."""


class PeriodIndexError(GenDIDError):
    """Observed periods do not form a contiguous integer range."""


class TransformDomainError(GenDIDError):
    """Outcome values fall outside the domain of the requested transform."""


class AdoptionAtStartError(GenDIDError):
    """A unit is treated from the first period and has no pre-treatment period."""


class DesignTooSmallError(GenDIDError):
    """A design needs at least two units and two periods."""


class DesignTooLargeError(GenDIDError):
    """Dense construction would exceed the configured size cap."""


class NoTreatmentError(GenDIDError):
    """No unit is ever treated, so there is no treatment effect to catalogue."""


class CovarianceParamError(GenDIDError):
    """Working-covariance parameters or a supplied matrix are invalid."""


class EmptyEstimandError(GenDIDError):
    """Estimand contains no terms."""


class InfeasibleEstimandError(GenDIDError):
    """No unbiased weight vector exists for the requested estimand.

    Carries the :class:`~gendid.solver.Feasibility` report when available.
    """

    def __init__(self, message, feasibility=None):
        super().__init__(message)
        self.feasibility = feasibility


class DegenerateDesignError(GenDIDError):
    """Design lacks the variation a method needs (e.g. no eligible comparison)."""


class DegenerateVarianceError(GenDIDError):
    """A variance ratio was requested against a zero variance."""


class DimensionError(GenDIDError):
    """Weights, panel, or covariance dimensions do not agree."""


class NumericalError(GenDIDError):
    """A numerical routine failed to reach the required accuracy."""


class UnsupportedEstimatorError(GenDIDError):
    """An estimator was requested that the registry does not provide."""

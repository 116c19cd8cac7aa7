"""Exception and warning types shared across the toolkit."""


class LiqresError(Exception):
    """Base class for all toolkit errors."""


# --- order book ---

class UnknownOrderId(LiqresError):
    """Execute or Cancel referenced an order id that is not resting in the book."""


class CrossedBookRejected(LiqresError):
    """A submission would cross the book and the policy is to reject it."""


class InvalidEvent(LiqresError):
    """An event violates basic field invariants (volume, kind, ordering)."""


# --- liquidity measures ---

class EmptySide(LiqresError):
    """A measure was requested on a book with an empty bid or ask side."""


class DegenerateR(LiqresError):
    """The round-trip volume R evaluated to zero."""


# --- TED / survival fitting ---

class DegenerateDistribution(LiqresError):
    """Too few distinct values to form empirical decile thresholds."""


class TooFewObservations(LiqresError):
    """Fewer exceedance records than model parameters."""


class MissingFit(LiqresError):
    """A per-threshold fit required for the resilience profile is absent."""


# --- functional data ---

class OutOfRange(LiqresError):
    """Evaluation point lies outside the basis range."""


class InsufficientCurves(LiqresError):
    """Not enough curves for the requested number of components."""


class SharedBasisViolation(LiqresError):
    """Input curves do not share a common basis."""


# --- commonality ---

class NonConvergence(LiqresError):
    """Fixed-point component search failed to converge after all restarts."""


# --- warnings ---

class LiqresWarning(UserWarning):
    """Base class for toolkit warnings."""


class RankDeficientDesign(LiqresWarning):
    """Collinear covariates were dropped from a regression design."""


class SingularSystem(LiqresWarning):
    """A smoothing system was singular and its diagonal was regularized."""


class SingularNormalEquations(LiqresWarning):
    """Concurrent-model normal equations were singular; penalty increased."""


class ConstantColumn(LiqresWarning):
    """A constant asset column was dropped before factor extraction."""


class DegenerateContrast(LiqresWarning):
    """All negentropy estimates are near zero; component ranking is unstable."""


class DegenerateEigenstructure(LiqresWarning):
    """Sample covariance is (near) zero; eigenfunctions are arbitrary."""


class CollapsedThresholds(LiqresWarning):
    """Empirical deciles contain ties; thresholds were nudged apart."""


class SaturatedFit(LiqresWarning):
    """As many observations as parameters; residual scale is zero."""

"""Exception taxonomy shared across the package.

Every failure mode that callers are expected to branch on gets its own
class; generic programming errors stay as plain ValueError/TypeError.
"""

from __future__ import annotations

__all__ = [
    "LcmetricError",
    "IntegrationError",
    "StepSizeUnderflow",
    "NonFiniteState",
    "NoSignChange",
    "FieldUndefined",
    "OrbitError",
    "NoConvergence",
    "SingularShootingJacobian",
    "EquilibriumFound",
    "NotExponentiallyStable",
    "AmbiguousTrivialMultiplier",
    "DecompositionError",
    "DefectiveStructureUnresolved",
    "ComplexPairMismatch",
    "KindMismatch",
    "TrivialBlockMissing",
    "InvariantViolation",
    "ChartError",
    "OutsideChart",
    "DegenerateDenominator",
    "BranchJump",
    "BadInterval",
    "NoDecayDetected",
    "NeverReachesLevel",
    "OutsideBasin",
    "EvalError",
    "SingularF",
    "BasisDegenerate",
    "CholeskyFail",
]


class LcmetricError(Exception):
    """Base class for all package-specific errors."""


# -- integration / flow ------------------------------------------------------

class IntegrationError(LcmetricError):
    pass


class StepSizeUnderflow(IntegrationError):
    """The adaptive integrator drove the step below machine spacing."""


class NonFiniteState(IntegrationError):
    """The vector field returned NaN/Inf at a visited state."""


class NoSignChange(IntegrationError):
    """Event function has no sign change on the searched span."""


class FieldUndefined(IntegrationError):
    """A sampled field raised or returned non-finite values at a flow point."""


# -- periodic orbit ----------------------------------------------------------

class OrbitError(LcmetricError):
    pass


class NoConvergence(OrbitError):
    """Newton shooting failed to meet the residual target."""


class SingularShootingJacobian(OrbitError):
    pass


class EquilibriumFound(OrbitError):
    """The iteration collapsed onto a fixed point of the flow."""


class NotExponentiallyStable(OrbitError):
    """A nontrivial multiplier sits on or outside the unit circle."""


class AmbiguousTrivialMultiplier(OrbitError):
    """More than one Floquet multiplier lies within tolerance of 1."""


# -- Floquet decomposition ---------------------------------------------------

class DecompositionError(LcmetricError):
    pass


class DefectiveStructureUnresolved(DecompositionError):
    """Rank decisions for a defective cluster are unstable at tolerance."""


class ComplexPairMismatch(DecompositionError):
    """A complex cluster has no matching conjugate cluster."""


class KindMismatch(DecompositionError):
    """Block data inconsistent with the declared block kind."""


class TrivialBlockMissing(DecompositionError):
    """No 1x1 block with multiplier 1 found during orbit reordering."""


class InvariantViolation(DecompositionError):
    """A construction invariant exceeded its tolerance."""

    def __init__(self, name: str, value: float, bound: float):
        self.name = name
        self.value = value
        self.bound = bound
        super().__init__(f"invariant {name!r} violated: {value:.3e} > {bound:.3e}")


# -- projection chart / synchronization --------------------------------------

class ChartError(LcmetricError):
    pass


class OutsideChart(ChartError):
    """No seed phase yields Newton convergence with a negative G_theta."""


class DegenerateDenominator(ChartError):
    """Synchronization denominator is non-positive at the evaluation point."""


class BranchJump(ChartError):
    """Phase continuation jumped by more than a quarter period after refinement."""


# -- global metric -----------------------------------------------------------

class BadInterval(LcmetricError):
    pass


class NoDecayDetected(LcmetricError):
    """Integrand envelope failed to decay within the horizon cap."""


class NeverReachesLevel(LcmetricError):
    """Trajectory never crossed the requested distance level."""


class OutsideBasin(LcmetricError):
    """Point did not reach the orbit neighbourhood within the time budget."""


# -- metric evaluation -------------------------------------------------------

class EvalError(LcmetricError):
    pass


class SingularF(EvalError):
    """Vector field vanishes at the evaluation point."""


class BasisDegenerate(EvalError):
    """Reference basis invalid at the evaluation point and re-anchoring disabled."""


class CholeskyFail(EvalError):
    """Constraint Gram matrix is not numerically positive definite."""

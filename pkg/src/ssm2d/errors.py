"""Exception hierarchy shared by all modules.

The CLI maps these onto exit codes: validation and structural failures
(bad model files, broken assumptions) exit with 1, numerical failures
(resonances, divergent iterations, failed solves) with 2, and I/O
problems with 3.
"""


class SsmError(Exception):
    """Base class for all package errors."""


class ValidationError(SsmError):
    """Model or spectral structure violates a required property (exit 1)."""


class NumericalError(SsmError):
    """A numerical procedure failed or refused to run (exit 2)."""


class InputOutputError(SsmError):
    """File missing, unreadable or unparseable (exit 3)."""


# -- model / file validation -------------------------------------------------

class ParseError(InputOutputError):
    """Model file is not valid JSON or misses required structure."""


class DimensionError(ValidationError):
    """State dimension is odd or matrix shapes are inconsistent."""


class EquilibriumError(ValidationError):
    """A nonlinear term has total degree < 2, so the origin would not be
    an equilibrium with vanishing Jacobian contribution."""


class CommutatorError(ValidationError):
    """The damping and rotation matrices do not commute."""


# -- spectral analysis -------------------------------------------------------

class NotDiagonalizableError(ValidationError):
    """Rotation matrix is defective or too close to defective."""


class RealEigenvalueError(ValidationError):
    """Some eigenvalue of the rotation matrix has (numerically) zero
    imaginary part."""


class NoSpectralGapError(ValidationError):
    """The required smoothness order exceeds the configured cap."""


class DegenerateModeError(ValidationError):
    """The selected mode pair has no first-order damping."""


class SelectionError(ValidationError):
    """Requested mode index is out of range."""


class NotRealError(ValidationError):
    """The mode projector failed its realness check."""


# -- expansion ---------------------------------------------------------------

class SolvabilityError(NumericalError):
    """The conservative part of a radial-rate solvability product did not
    vanish, so the division by the damping parameter is ill posed."""


class NearResonanceError(NumericalError):
    """A diagonal solve divisor fell below the non-resonance margin."""


class OrderError(NumericalError):
    """Requested expansion order is below the smoothness split order."""


class EpsDivisionError(NumericalError):
    """Jet division by the damping parameter with a nonzero constant term."""


# -- correction --------------------------------------------------------------

class LeadingOrderError(NumericalError):
    """The residual forcing does not vanish at the expected leading order."""


class QuadratureError(NumericalError):
    """Oscillatory quadrature failed to converge within its budget."""


class RegimeError(NumericalError):
    """Picard path requested below its minimum damping parameter."""


class SingularCollocationError(NumericalError):
    """A collocation divisor hit a radius-dependent resonance."""


class NoConvergenceError(NumericalError):
    """Fixed-point or Newton iteration exceeded its iteration budget."""


class DivergenceError(NumericalError):
    """Observed contraction ratio exceeded the divergence threshold."""


# -- verification ------------------------------------------------------------

class ProjectionError(NumericalError):
    """Newton projection onto the manifold failed to converge."""


class MissingConservedError(NumericalError):
    """Conservation test requested for a model without a conserved
    quantity."""

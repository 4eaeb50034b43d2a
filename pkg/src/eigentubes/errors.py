"""Exception types shared across the package.

Every operation that can refuse its input raises one of these rather than a
bare ValueError, so callers can tell a mathematical domain problem from a
numerical failure.
"""


class EigentubesError(Exception):
    """Base class for all package errors."""


class InputError(EigentubesError):
    """Malformed or degenerate input data."""


class ChartDomainError(EigentubesError):
    """Point lies outside the usable region of the requested chart."""


class ConvergenceError(EigentubesError):
    """An iterative solver exhausted its iteration budget."""


class ToleranceError(EigentubesError):
    """Integrated quantity drifted beyond the configured tolerance."""


class DomainError(EigentubesError):
    """Argument outside the mathematical domain of the operation."""


class DegenerateCurveError(EigentubesError):
    """Curve tangent vanishes at or between nodes."""


class CoverError(EigentubesError):
    """A phase-space sample is not contained in any supplied cover element."""


class ColorBudgetError(EigentubesError):
    """Greedy coloring needed more colors than the configured budget."""


class NonContractingError(EigentubesError):
    """Iterated images fail the minimum contraction-rate check."""


class TransversalityError(EigentubesError):
    """Principal angle at an intersection event is below threshold."""


class NoConvergenceError(EigentubesError):
    """Extrapolated sequence did not stabilize."""


class QuadratureError(EigentubesError):
    """Quadrature refinement did not settle within its tolerance."""


class OverflowGuardError(EigentubesError):
    """Requested order is beyond the safe range of the recurrences."""


class ResolutionError(EigentubesError):
    """Grid refinement ended before the extremum stabilized."""


class RankError(EigentubesError):
    """Design matrix of a fit is rank deficient."""


class RankCapError(EigentubesError):
    """Separable expansion of a symbol exceeded the rank cap."""


class CertificateMissingError(EigentubesError):
    """Operation requires a covering certificate and none was supplied."""


class ConfigError(EigentubesError):
    """Configuration file is malformed or inconsistent."""


class AssertionFailure(EigentubesError):
    """A numerical assertion requested by an experiment failed."""


class SchemaMismatch(EigentubesError):
    """Two run manifests cannot be compared."""

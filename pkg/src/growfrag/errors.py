"""Exception hierarchy shared across the package.

``ConfigError`` and its subclasses signal bad user input, ``NumericalFailure``
and its subclasses signal a numerical routine that could not meet its
contract.  The CLI maps these onto distinct exit codes.
"""


class GrowfragError(Exception):
    """Base class for all package errors."""


class ConfigError(GrowfragError):
    """Invalid configuration or coefficient declaration."""


class HypothesesNotSatisfied(ConfigError):
    """Coefficient hypotheses failed and no override was requested."""

    def __init__(self, report):
        self.report = report
        failed = ", ".join(c.clause for c in report.clauses if not c.passed)
        super().__init__(f"hypotheses not satisfied: {failed}")


class CheckFailed(GrowfragError):
    """A declared experiment check did not pass."""


class NumericalFailure(GrowfragError):
    """Base class for numerical routines exceeding their error budget."""


# -- model ------------------------------------------------------------------

class TargetOutOfRange(NumericalFailure):
    """Moment equation target is not reachable on the moment curve."""


class EmptyTruncation(NumericalFailure):
    """Kernel truncation removed all mass."""


class QuadratureFailure(NumericalFailure):
    """Adaptive quadrature exceeded its refinement budget."""


# -- discretization ---------------------------------------------------------

class BadLayout(ConfigError):
    """Unusable grid layout specification."""


# -- eigen ------------------------------------------------------------------

class NoConvergence(NumericalFailure):
    """Iterative eigensolve did not converge within the iteration budget."""

    def __init__(self, iterations, message=""):
        self.iterations = iterations
        super().__init__(message or f"no convergence after {iterations} iterations")


class NonPositiveEigenvector(NumericalFailure):
    """Converged eigenvector has significant negative entries."""


class BracketViolation(NumericalFailure):
    """Truncated eigenvalue ordering failed beyond tolerance."""


class DegenerateWindow(ConfigError):
    """Fit window contains too few cells or is empty."""


# -- semigroup --------------------------------------------------------------

class FlowFailure(NumericalFailure):
    """Characteristic flow integration exceeded its budget."""


class QuadratureUnstable(NumericalFailure):
    """Node-doubling check of a time quadrature exceeded tolerance."""


class CFLViolation(ConfigError):
    """Requested time step violates the CFL bound of the grid."""


class NegativeDensity(NumericalFailure):
    """Propagated field developed negative values beyond tolerance."""

    def __init__(self, t, location, value):
        self.t = t
        self.location = location
        self.value = value
        super().__init__(f"negative density {value:.3e} at x={location:.6g}, t={t:.6g}")


# -- experiments ------------------------------------------------------------

class DomainTooSmall(ConfigError):
    """Grid does not contain the initial data and its forward flow."""


class NoRoot(NumericalFailure):
    """Root bracketing failed."""

    def __init__(self, side, message=""):
        self.side = side
        super().__init__(message or f"no root: bracketing failed on {side} side")


class EigenFailure(NumericalFailure):
    """An inner eigenvalue solve failed during calibration."""


class SpectrumFailure(NumericalFailure):
    """Dense spectrum computation failed or produced no usable gap."""


class WrongKernel(ConfigError):
    """Experiment requires a specific fragmentation kernel."""

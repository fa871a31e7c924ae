"""Exception hierarchy shared by every module of the package."""


class OpenDynError(Exception):
    """Base class for all errors raised by :mod:`opendyn`."""


class DimensionBudgetError(OpenDynError):
    """A composite dimension or an enumeration exceeded its configured budget."""


class PathBudgetError(DimensionBudgetError):
    """Too many label paths would be enumerated for a series term."""


class NotHermitianError(OpenDynError, ValueError):
    pass


class DimensionMismatchError(OpenDynError, ValueError):
    pass


class SolvabilityError(OpenDynError):
    """The unperturbed Hamiltonian does not admit a separated product eigenbasis."""


class DegenerateDenominatorError(OpenDynError, ZeroDivisionError):
    """A perturbative denominator vanished while its numerator did not."""

    def __init__(self, message, pair=None):
        super().__init__(message)
        self.pair = pair


class NonFiniteStateError(OpenDynError, FloatingPointError):
    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class KrausDefectError(OpenDynError):
    """Truncated Kraus sum is not complete to the requested tolerance."""


class AssumptionViolatedError(OpenDynError):
    """A model does not satisfy a precondition required by the chosen equation."""


class UnsupportedOrderError(OpenDynError, ValueError):
    pass


class ScenarioError(OpenDynError, ValueError):
    """Malformed or invalid scenario description."""

    def __init__(self, message, location=None):
        if location:
            message = f"{location}: {message}"
        super().__init__(message)
        self.location = location

"""Exception hierarchy shared across the package.

Two branches matter for the command line: validation problems (bad input,
missing prerequisite artifacts, malformed config) exit with code 2, and
numerical failures (non-convergent fixed points, degenerate integrals,
singular systems) exit with code 3.
"""


class ConductSimError(Exception):
    """Base class for all package errors."""


class ValidationError(ConductSimError):
    """Invalid input data, config, or arguments."""


class PrerequisiteError(ValidationError):
    """A pipeline stage was invoked before the stage it depends on."""


class NumericalError(ConductSimError):
    """A numerical routine failed to produce a usable result."""


class InversionError(NumericalError):
    """Share inversion did not reach tolerance within the iteration budget."""


class EquilibriumError(NumericalError):
    """Price equilibrium solver did not converge.

    Carries the residual trace so callers can inspect the failure.
    """

    def __init__(self, message, residual_trace=None):
        super().__init__(message)
        self.residual_trace = list(residual_trace) if residual_trace is not None else []


class DegenerateSurplusError(NumericalError):
    """Consumer surplus is undefined for every simulation draw."""

"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: input problems exit 2, numerical
failures exit 3, infeasible control problems exit 4.
"""


class HeatnetError(Exception):
    """Base class for all package-specific errors."""


class InputError(HeatnetError):
    """Malformed or missing input file."""


class ValidationError(InputError):
    """Input parsed but violates a structural invariant."""


class NumericalError(HeatnetError):
    """A numerical procedure failed to converge or is ill-posed."""


class NewtonError(NumericalError):
    """Newton iteration diverged or exhausted its iteration budget."""

    def __init__(self, message, residual_history=None, step_index=None):
        super().__init__(message)
        self.residual_history = list(residual_history or [])
        self.step_index = step_index


class CoverageError(NumericalError):
    """A runtime flux-direction pattern is missing from the operator library."""


class DegenerateEnergyError(NumericalError):
    """Consumer energy density too close to the return level."""

    def __init__(self, message, consumer_id=None, time=None):
        super().__init__(message)
        self.consumer_id = consumer_id
        self.time = time


class GreedyError(NumericalError):
    """Greedy basis enrichment stopped above the requested tolerance."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class InfeasibleError(HeatnetError):
    """No control satisfying the constraint set could be found."""

    def __init__(self, message, binding=None):
        super().__init__(message)
        self.binding = binding or []

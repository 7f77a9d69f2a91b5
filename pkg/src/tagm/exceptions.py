"""Exception hierarchy shared by the library and the command line."""


class TAGMError(Exception):
    """Base class for every error raised by this package."""


class InputError(TAGMError, ValueError):
    """Malformed or out-of-contract input."""


class ConfigurationError(TAGMError, ValueError):
    """Invalid or infeasible configuration."""


class ConvergenceError(TAGMError):
    """An iterative solver stopped before reaching its tolerance.

    The last iterate and its residual are attached so callers can decide
    whether the approximate answer is usable.
    """

    def __init__(self, message, iterate=None, residual=None):
        super().__init__(message)
        self.iterate = iterate
        self.residual = residual


class DegenerateEmissionError(TAGMError):
    """Some observation has essentially zero likelihood under every state."""


class EmptyStateError(TAGMError):
    """A hidden state received (almost) no responsibility mass."""

    def __init__(self, state, mass=0.0):
        super().__init__(f"state {state} is empty (responsibility mass {mass:.3g})")
        self.state = state
        self.mass = mass


class FitError(TAGMError):
    """Every EM restart failed."""


class InternalConsistencyError(TAGMError):
    """An invariant that should hold by construction was violated."""


class StabilityError(TAGMError):
    """Too few successful repeats to build a consensus matrix."""

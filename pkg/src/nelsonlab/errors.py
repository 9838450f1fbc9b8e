"""Exception types shared across the package."""


class ConvergenceError(RuntimeError):
    """An iterative solver did not reach its tolerance.

    Attributes:
        residual: last residual estimate reached by the solver.
    """

    def __init__(self, message, residual=float("nan")):
        super().__init__(f"{message} (residual={residual:.3e})")
        self.residual = residual


class TruncationError(ValueError):
    """The truncated Fock space is too small for the requested state."""

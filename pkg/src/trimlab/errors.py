"""Semantic exceptions shared across trimlab modules."""


class TrimlabError(Exception):
    """Base class for all trimlab domain errors."""


class InfiniteQuantileError(TrimlabError):
    """Quantile requested at y=1 for a model with unbounded support."""


class QuadratureError(TrimlabError):
    def __init__(self, message: str, achieved_error: float):
        super().__init__(f"{message} (achieved error {achieved_error:.3e})")
        self.achieved_error = achieved_error


class IllPosedConjugateError(TrimlabError):
    """x * L(x) is not strictly increasing on the search bracket."""


class UndefinedPointError(TrimlabError):
    """Map applied at a point removed from its domain."""


class NoSamplerError(TrimlabError):
    """No invariant density and no Ulam stationary histogram available."""


class NonTerminatingStreamError(TrimlabError):
    """Digit extraction stalled beyond the configured bit budget."""


class PlanError(TrimlabError):
    """Trimming-plan construction failed at a checkpoint."""

    def __init__(self, message: str, checkpoint: int | None = None):
        if checkpoint is not None:
            message = f"{message} (at checkpoint n={checkpoint})"
        super().__init__(message)
        self.checkpoint = checkpoint


class SpectralConvergenceError(TrimlabError):
    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (last residual {residual:.3e})")
        self.residual = residual


class ConfigError(TrimlabError):
    """Experiment configuration invalid against the shipped schema."""


class InvariantViolation(TrimlabError):
    """A runtime-asserted invariant (e.g. the sandwich check) failed."""

"""Hypoelliptic diffusions on sub-Riemannian manifolds: simulation, score learning and bridge sampling."""

__version__ = "0.1.0"

from .errors import (ConfigurationError, DivergenceError, DomainError, EvaluationError,  # noqa: E402
                     NoConvergenceError, NonFiniteLossError, SingularFrameError, SRBridgeError)
from .geometry import SubRiemannianModel, euclidean_model  # noqa: E402
from .heisenberg import heisenberg_model  # noqa: E402

__all__ = [
    "__version__", "SubRiemannianModel", "euclidean_model", "heisenberg_model",
    "SRBridgeError", "ConfigurationError", "DomainError", "EvaluationError", "SingularFrameError",
    "DivergenceError", "NonFiniteLossError", "NoConvergenceError",
]

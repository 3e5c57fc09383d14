"""Exception hierarchy shared by all subpackages."""


class SRBridgeError(Exception):
    """Base class for library errors."""


class EvaluationError(SRBridgeError):
    """A frame, drift or score evaluated to a non-finite value."""


class SingularFrameError(SRBridgeError):
    """The full frame [sigma | extension] is not invertible at a point."""


class DomainError(SRBridgeError, ValueError):
    """An argument is outside the domain of an operation (t <= 0, bad shapes, ...)."""


class ConfigurationError(SRBridgeError, ValueError):
    """Inconsistent model, network or training configuration."""


class DivergenceError(SRBridgeError):
    """A simulated path produced non-finite states."""

    def __init__(self, step, message=None):
        self.step = step
        super().__init__(message or f"non-finite state at step {step}")


class NonFiniteLossError(SRBridgeError):
    """Training produced a non-finite loss."""

    def __init__(self, iteration, epoch=None, batch=None):
        self.iteration = iteration
        self.epoch = epoch
        self.batch = batch
        where = f"iteration {iteration}"
        if epoch is not None:
            where += f" (epoch {epoch}, batch {batch})"
        super().__init__(f"non-finite loss at {where}")


class NoConvergenceError(SRBridgeError):
    """An iterative solver did not reach its tolerance."""

"""Exception types shared across the package."""


class InvalidInputError(ValueError):
    """Raised when an argument violates a documented precondition."""


class InvalidStateError(RuntimeError):
    """Raised when an object is used out of sequence (e.g. a stale tape)."""


class NumericalError(ArithmeticError):
    """Raised when a computation produces non-finite values.

    ``step`` and ``epsilon`` are filled in when the failure happens inside a
    training or annealing loop so the caller can report where it broke.
    """

    def __init__(self, message, step=None, epsilon=None, checkpoint=None):
        super().__init__(message)
        self.step = step
        self.epsilon = epsilon
        self.checkpoint = checkpoint


class GraphDisconnectedError(InvalidInputError):
    def __init__(self, n_components):
        super().__init__(
            f"graph is disconnected ({n_components} connected components); "
            "increase k or check the input points"
        )
        self.n_components = n_components

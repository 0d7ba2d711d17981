"""Exception types shared across the pipeline."""


class InvalidArgument(ValueError):
    pass


class UndefinedDirection(ArithmeticError):
    """Flow direction requested for a stress state with zero deviator."""


class SolverFailure(RuntimeError):
    """Scalar return-map root search did not converge."""

    def __init__(self, message, **diagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics


class GeometryError(RuntimeError):
    """An element has a non-positive Jacobian."""


class SimulationDiverged(RuntimeError):
    pass


class NumericFailure(ArithmeticError):
    pass


class UndefinedCorrelation(ArithmeticError):
    pass


class MissingArtifact(FileNotFoundError):
    pass

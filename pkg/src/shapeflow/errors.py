"""Exception hierarchy shared by every shapeflow module."""


class ShapeflowError(Exception):
    """Base class for all errors raised by shapeflow."""


class DomainMismatchError(ShapeflowError):
    """Two objects live on different grids."""


class DomainViolationError(ShapeflowError):
    """A primitive or parameter does not fit inside the design region."""


class EmptyMaskError(ShapeflowError):
    pass


class InfiniteDistanceError(ShapeflowError):
    """A distance was requested to an empty target set."""


class IterationLimitError(ShapeflowError):
    """An iterative solver hit its iteration cap.

    The last residual is kept on ``residual`` so callers can decide whether the
    partial result is still usable.
    """

    def __init__(self, message, residual=float("nan")):
        super().__init__(f"{message} (last residual {residual:.3e})")
        self.residual = residual


class InvariantViolationError(ShapeflowError):
    """A state failed an a-posteriori invariant check (for instance membership in X)."""


class ConfigError(ShapeflowError):
    pass

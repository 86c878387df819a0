class SnoError(Exception):
    """Base class for all package errors."""


class DimensionError(SnoError, ValueError):
    pass


class ConfigError(SnoError, ValueError):
    pass


class StateError(SnoError, RuntimeError):
    pass


class BoundsError(SnoError, IndexError):
    pass


class RangeError(SnoError, ValueError):
    pass


class FormatError(SnoError, ValueError):
    pass


class DegenerateFeatureError(SnoError, ValueError):
    def __init__(self, features):
        self.features = list(features)
        super().__init__(f"constant feature(s), cannot normalize: {', '.join(self.features)}")


class SolverError(SnoError, RuntimeError):
    def __init__(self, message, residual=None):
        self.residual = residual
        super().__init__(message)


class DivergenceError(SnoError, RuntimeError):
    def __init__(self, step, loss):
        self.step = step
        self.loss = loss
        super().__init__(f"loss became non-finite ({loss}) at step {step}")


class EmptyBatchError(DimensionError):
    pass

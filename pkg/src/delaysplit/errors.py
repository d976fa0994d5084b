"""Exception types raised across the package."""


class DelaySplitError(Exception):
    pass


class HypothesisError(DelaySplitError, ValueError):
    """Delay/variation pair violates the small-delay hypothesis."""


class DimensionError(DelaySplitError, ValueError):
    pass


class QuadratureError(DelaySplitError, RuntimeError):
    def __init__(self, message, achieved=None):
        super().__init__(message)
        self.achieved = achieved


class IntegrationError(DelaySplitError, RuntimeError):
    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time


class WindowError(DelaySplitError, ValueError):
    """Requested time lies outside a computed window, or the window is unusable."""


class ConvergenceError(DelaySplitError, RuntimeError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual

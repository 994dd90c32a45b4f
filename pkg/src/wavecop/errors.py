"""Exception types shared across the package."""


class InvalidInputError(ValueError):
    """Argument has the wrong shape, length or range."""


class DomainError(ArithmeticError):
    """A primitive was evaluated outside its mathematical domain."""

    def __init__(self, primitive, message, node=None):
        self.primitive = primitive
        self.node = node
        where = f" (node {node})" if node is not None else ""
        super().__init__(f"{primitive}{where}: {message}")


class NonFiniteError(ArithmeticError):
    """A forward value became NaN or infinite."""

    def __init__(self, primitive, node=None, detail=""):
        self.primitive = primitive
        self.node = node
        where = f" at node {node}" if node is not None else ""
        msg = f"non-finite value from {primitive}{where}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class DegenerateDensityError(ValueError):
    """Wavelet coefficients reconstruct to an identically zero signal."""


class SupportError(ValueError):
    """A point lies outside the support box of the variational density."""


class NotApplicableError(ValueError):
    """Operation requested for a copula variant that has no such object."""


class ConfigError(ValueError):
    """Experiment or fit configuration failed validation."""


class FitError(ArithmeticError):
    """Optimization aborted; carries the trace so far and the offending draw."""

    def __init__(self, message, trace=None, theta=None):
        self.trace = [] if trace is None else list(trace)
        self.theta = theta
        super().__init__(message)


class InitializationError(ArithmeticError):
    """A sampler or optimizer cannot start from the given point."""

"""Exception hierarchy shared by all vortlab modules."""


class VortlabError(Exception):
    """Base class for every error raised by vortlab."""


class ConfigError(VortlabError, ValueError):
    """Invalid configuration: bad grid size, mismatched grids, schema violations."""


class DomainError(VortlabError, ValueError):
    """An argument lies outside the domain of an operation (negative dt, p < 1, ...)."""


class InvariantError(VortlabError, ValueError):
    """A field violates a structural invariant (e.g. nonzero mean)."""


class OrderingError(VortlabError, ValueError):
    """Samples were supplied out of time order."""


class UndefinedError(VortlabError, ArithmeticError):
    """A quantity is undefined for the given input (empty average, zero field ratio)."""


class StepError(VortlabError, RuntimeError):
    """A time step was refused, typically by the CFL guard."""

    def __init__(self, message, max_speed=None):
        super().__init__(message)
        self.max_speed = max_speed


class DivergenceError(VortlabError, RuntimeError):
    """The solution blew up or became non-finite."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step

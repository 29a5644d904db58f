"""Exception hierarchy shared by all filters and models."""


class FilterError(Exception):
    """Base class for every error raised by the package."""


class ContractError(FilterError, ValueError):
    """An argument violates a documented precondition (shape, range)."""


class ConfigError(FilterError, ValueError):
    """A model or experiment configuration is invalid."""


class NumericalError(FilterError, ArithmeticError):
    """A numerical operation failed (non-finite values, indefinite matrix).

    Parameters
    ----------
    message : str
        Human readable description.
    step : int, optional
        Time step at which the failure happened, when known.
    index : int, optional
        Particle or component index, when known.
    """

    def __init__(self, message, step=None, index=None):
        super().__init__(message)
        self.step = step
        self.index = index

    def __str__(self):
        msg = super().__str__()
        extra = []
        if self.step is not None:
            extra.append(f"step {self.step}")
        if self.index is not None:
            extra.append(f"index {self.index}")
        return f"{msg} ({', '.join(extra)})" if extra else msg


class DegenerateLikelihoodError(NumericalError):
    """All importance weights vanished; the filter has lost the measurement."""


class DivergenceError(NumericalError):
    """A simulated or filtered trajectory became non-finite."""

"""Exception hierarchy shared by every module of the toolkit."""


class QuasiergodicError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(QuasiergodicError):
    """Invalid experiment configuration or system definition."""


class UnknownSystem(ConfigError):
    def __init__(self, name: str, known: list[str]):
        self.name = name
        self.known = sorted(known)
        super().__init__(
            f"unknown system '{name}'; registered systems: {', '.join(self.known)}"
        )


class OddDimension(ConfigError):
    """A Hamiltonian definition needs an even state dimension n = 2m."""


class NumericalError(QuasiergodicError):
    """A numerical procedure could not produce a trustworthy value."""


class IntegrationDiverged(NumericalError):
    pass


class StepUnderflow(NumericalError):
    pass


class SpeedVanishes(NumericalError):
    pass


class NotConverged(NumericalError):
    pass


class ImmanenceUnbounded(NumericalError):
    pass


class EmptyIntersection(NumericalError):
    pass


class NotInvariant(NumericalError):
    pass


class EmptyCloud(QuasiergodicError, ValueError):
    pass


class GridMismatch(QuasiergodicError, ValueError):
    pass


class BudgetExceeded(QuasiergodicError):
    pass

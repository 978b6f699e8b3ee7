"""Exception hierarchy shared by all hamspec modules."""


class HamspecError(Exception):
    """Base class for every error raised by the library."""


class InputError(HamspecError, ValueError):
    pass


class DomainError(InputError):
    """Time argument outside the horizon of a coefficient field."""


class DimensionError(InputError):
    pass


class ConfigError(InputError):
    """Malformed configuration. ``location`` names the offending field or line."""

    def __init__(self, message, location=None):
        self.location = location
        if location is not None:
            message = f"{location}: {message}"
        super().__init__(message)


class AssumptionError(HamspecError):
    """A standing structural assumption on the coefficients does not hold."""


class PreconditionError(AssumptionError):
    pass


class SingularityError(HamspecError):
    def __init__(self, message, t=None):
        self.t = t
        super().__init__(message if t is None else f"{message} (t={t!r})")


class NearSingularityError(SingularityError):
    """``I - K H33`` or ``I - K H44`` is numerically singular."""


class NumericalFailure(HamspecError):
    def __init__(self, message, diagnostics=None):
        self.diagnostics = diagnostics or {}
        super().__init__(message)


class BracketError(HamspecError):
    pass


class InconsistencyError(HamspecError):
    pass


class BudgetError(HamspecError):
    pass


class ScheduleError(HamspecError):
    pass

"""Exception hierarchy shared by all homoglab modules."""


class HomogLabError(Exception):
    """Base class for every error raised by the toolkit."""

    exit_code = 3


class DomainError(HomogLabError, ValueError):
    """Evaluation requested outside the sampled domain of a potential or table."""


class ConvexityError(HomogLabError, ValueError):
    """Sampled data violates convexity; carries the offending slope triple."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class MonotonicityError(HomogLabError, ValueError):
    """A sampled graph is not monotone; carries the offending index pair."""

    def __init__(self, message, pair=None):
        super().__init__(message)
        self.pair = pair


class ConsistencyError(HomogLabError):
    """A quantity that must be nonnegative came out negative beyond tolerance."""


class ConvergenceError(HomogLabError):
    """An iterative solve did not reach its tolerance within the budget."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = list(history or [])


class StepError(ConvergenceError):
    """A time step was rejected (inner solve or inclusion certificate failed)."""


class ConfigError(HomogLabError, ValueError):
    exit_code = 2


class SchemaError(HomogLabError, ValueError):
    """Persisted artifact has a different schema version or config hash."""

    exit_code = 4

"""Exception hierarchy shared by all dbarlab modules."""


class DbarlabError(Exception):
    """Base class for every error raised by the library."""


class InvalidDomainError(DbarlabError, ValueError):
    pass


class ParameterError(DbarlabError, ValueError):
    pass


class SamplingError(DbarlabError, ValueError):
    pass


class GridMismatchError(DbarlabError, ValueError):
    pass


class DegreeCapError(DbarlabError, ValueError):
    """Raised when the monomial Gram matrix is too ill-conditioned."""


class NotClosedError(DbarlabError):
    """The datum failed a closedness check.

    ``node`` holds the multi-index of the worst offending grid node (or the
    worst test form) and ``value`` the offending magnitude.
    """

    def __init__(self, message, node=None, value=None):
        super().__init__(message)
        self.node = node
        self.value = value


class ThresholdError(DbarlabError, ValueError):
    """The requested exponent is outside the range where the pipeline is sound."""


class ConfigError(DbarlabError, ValueError):
    """Configuration validation failed; ``problems`` lists every violation."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n  - " + "\n  - ".join(self.problems))

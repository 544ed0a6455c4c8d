"""Exception hierarchy shared by every module."""


class StreamcovError(Exception):
    """Base class for all errors raised by streamcov."""


class DimensionError(StreamcovError, ValueError):
    """Array shapes or channel counts do not agree."""


class DataError(StreamcovError, ValueError):
    """Input values are malformed (non-finite, unparsable)."""


class PreconditionError(StreamcovError, ValueError):
    """An operation was called outside its valid regime."""


class InapplicableError(PreconditionError):
    """The statistic is not defined for this configuration (e.g. LR with p >= n_g)."""


class SingularityError(StreamcovError, ArithmeticError):
    """A covariance matrix that must be nonsingular is not."""


class DegenerateError(StreamcovError, ArithmeticError):
    """A variance or learned scale collapsed to zero."""


class ConfigError(StreamcovError, ValueError):
    """Inconsistent or invalid configuration."""

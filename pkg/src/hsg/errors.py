"""Exception hierarchy shared across the package."""


class HSGError(Exception):
    """Base class for all package errors."""


class RewardDomainError(HSGError, ValueError):
    """A reward input fell outside [0, 1].

    This is a pipeline bug, never a model failure.
    """


class RatioOverflow(HSGError, OverflowError):
    """exp(logprob_new - logprob_old) overflowed; the policies diverged."""


class SupportMismatch(HSGError, ValueError):
    """The reference distribution is zero where the new one is not."""


class BackendError(HSGError):
    """A policy backend failed hard."""


class EndpointUnreachable(BackendError):
    pass


class GenerationTruncated(BackendError):
    pass


class UnsupportedScoring(BackendError):
    pass


class VerifierUnavailable(HSGError):
    pass


class ConfigError(HSGError):
    pass


class DataError(HSGError):
    pass


class EmptyDataset(DataError):
    pass


class SchemaViolation(DataError):
    pass


class FixtureError(DataError):
    pass

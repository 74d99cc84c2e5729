"""Exception and warning types raised across the pipeline."""


class PollWaitError(Exception):
    """Base class for all data, config and estimation errors."""


class DegenerateGeometry(PollWaitError):
    pass


class SchemaMismatch(PollWaitError):
    pass


class EmptyInput(PollWaitError):
    pass


class DuplicateKey(PollWaitError):
    pass


class JoinError(PollWaitError):
    def __init__(self, missing):
        self.missing = sorted(missing)
        super().__init__(f"places with unresolved block groups: {', '.join(map(str, self.missing))}")


class InvariantViolation(PollWaitError):
    pass


class UnsortedInput(PollWaitError):
    pass


class MissingBound(PollWaitError):
    pass


class NonPositiveCurve(PollWaitError):
    pass


class RankDeficient(PollWaitError):
    def __init__(self, names, message=None):
        self.names = list(names)
        super().__init__(message or f"collinear regressors: {', '.join(self.names)}")


class TooFewClusters(PollWaitError):
    pass


class EmptyWindow(PollWaitError):
    pass


class MissingField(PollWaitError):
    pass


class DegenerateVariance(PollWaitError):
    pass


class DegenerateField(PollWaitError):
    pass


class UnknownBucket(PollWaitError):
    pass


class InsufficientOverlap(PollWaitError):
    pass


class ConfigInvalid(PollWaitError):
    pass


class SaturationWarning(UserWarning):
    """Radius curve never flattened below the gain threshold."""


class RankDeficientWarning(UserWarning):
    """Collinear regressors were dropped from a fit."""

"""Exception hierarchy.

``ModelError`` subclasses signal a violated model invariant (CLI exit code 3),
``NumericalError`` subclasses a numerical failure (exit code 4) and
``ConfigError`` a malformed experiment config (exit code 2).
"""


class MarkovSAError(Exception):
    """Base class for every error raised by the package."""


class ConfigError(MarkovSAError):
    pass


class ModelError(MarkovSAError):
    pass


class NumericalError(MarkovSAError):
    pass


class NonStochastic(ModelError):
    pass


class NotIrreducible(ModelError):
    pass


class PeriodicChain(ModelError):
    pass


class SteadyStateBiased(ModelError):
    pass


class NotSymmetric(ModelError):
    pass


class NotPositiveDefinite(ModelError):
    pass


class NotNegativeDefinite(ModelError):
    pass


class RankDeficientFeatures(ModelError):
    pass


class ZeroFeatures(ModelError):
    pass


class NotHurwitz(ModelError):
    pass


class InvalidStep(ModelError):
    pass


class StepInvalid(ModelError):
    """Step size violates the drift validity conditions of the mean-square bound."""


class KTooSmall(ModelError):
    pass


class MomentOrderTooHigh(ModelError):
    pass


class ScheduleInvalid(ModelError):
    pass


class PreconditionViolated(ModelError):
    pass


class MixingExceedsCap(NumericalError):
    pass


class SingularSystem(NumericalError):
    pass

"""Exception taxonomy shared by all qbsde modules."""


class QbsdeError(Exception):
    """Base class for all qbsde errors."""


class UnboundedGenerator(QbsdeError):
    """A required coefficient bound is infinite for the supplied generator."""


class DegenerateBounds(QbsdeError):
    """A bound constant that must be positive is zero."""


class ResourceLimit(QbsdeError):
    """Requested simulation exceeds the configured memory budget."""


class WeightDegeneracy(QbsdeError):
    """Effective sample size of importance weights fell below the floor."""

    def __init__(self, msg, ess=None, stage=None):
        super().__init__(msg)
        self.ess = ess
        self.stage = stage


class RankDeficient(QbsdeError):
    """Ridge-stabilized normal equations are still singular."""


class GeneratorEvaluationError(QbsdeError):
    """Generator produced NaN/inf during a backward sweep."""


class SmallnessViolated(QbsdeError):
    """Terminal condition exceeds the contraction smallness threshold."""


class NoConvergence(QbsdeError):
    """Picard iteration hit max_iter above tolerance.

    Carries the trace so callers can diagnose.
    """

    def __init__(self, msg, trace=None):
        super().__init__(msg)
        self.trace = trace


class StageCapExceeded(QbsdeError):
    """Terminal splitting would require more stages than the configured cap."""


class DominanceViolated(QbsdeError):
    """Comparison precondition (generator/terminal ordering) fails."""


class ConfigError(QbsdeError):
    """Malformed or incomplete run configuration."""

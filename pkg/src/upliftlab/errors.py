"""Exception hierarchy shared by every stage of the pipeline."""


class UpliftLabError(Exception):
    """Base class; ``exit_code`` is what the CLI returns for it."""

    exit_code = 1


class ConfigError(UpliftLabError, ValueError):
    exit_code = 2


class DimensionError(UpliftLabError, ValueError):
    exit_code = 2


class TrainingError(UpliftLabError, RuntimeError):
    exit_code = 3


class MetricError(UpliftLabError, ValueError):
    exit_code = 4


class InvariantError(UpliftLabError, AssertionError):
    """A structural guarantee was violated; always an implementation bug."""

    exit_code = 3

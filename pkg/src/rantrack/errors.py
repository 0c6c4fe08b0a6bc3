"""Exception hierarchy shared across the package."""


class RanTrackError(Exception):
    """Base class for all errors raised by rantrack."""

    category = "error"


class InvalidArgumentError(RanTrackError, ValueError):
    category = "invalid-argument"


class ShapeError(InvalidArgumentError):
    category = "shape"


class DomainError(RanTrackError, ValueError):
    category = "domain"


class NoHistoryError(RanTrackError):
    """Prediction requested from an empty external memory."""

    category = "no-history"


class TrainingDivergedError(RanTrackError, FloatingPointError):
    category = "training-diverged"


class EmptyDatasetError(RanTrackError):
    category = "empty-dataset"


class ParseError(RanTrackError):
    category = "parse"

    def __init__(self, message, path=None, line=None):
        loc = ""
        if path is not None:
            loc = f"{path}:"
        if line is not None:
            loc += f"{line}:"
        super().__init__(f"{loc} {message}" if loc else message)
        self.path = path
        self.line = line


class CheckpointError(RanTrackError):
    category = "checkpoint"


class ConfigError(RanTrackError):
    """Invalid configuration; ``problems`` lists every violation found."""

    category = "config"

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class OrderError(RanTrackError):
    category = "order"

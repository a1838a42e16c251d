"""Exception hierarchy shared by every stage."""


class ODNError(Exception):
    """Base class; ``stage`` names the pipeline step that failed."""

    stage = "odn"


class LoadError(ODNError, ValueError):
    stage = "load"

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ConfigError(ODNError, ValueError):
    stage = "config"


class ShapeError(ODNError, ValueError):
    stage = "shape"


class NumericError(ODNError, ValueError):
    stage = "numeric"


class SplitError(ODNError, ValueError):
    stage = "split"


class MissingLabelError(ODNError, KeyError):
    stage = "sample"


class TrainingSetupError(ODNError, ValueError):
    stage = "train"


class OracleError(ODNError, KeyError):
    stage = "teacher"


class ProtocolError(ODNError, RuntimeError):
    stage = "eval"


class NothingToAdd(ODNError, LookupError):
    """No labeled group is available for incorporation."""

    stage = "choose"

"""Exception and warning types shared across the package."""


class StereoNecError(Exception):
    """Base class for all errors raised by this package."""


class InsufficientData(StereoNecError):
    pass


class InvalidInput(StereoNecError, ValueError):
    pass


class OutOfRange(StereoNecError, ValueError):
    pass


class BehindCamera(StereoNecError):
    pass


class DegenerateDepth(StereoNecError):
    pass


class DegenerateScene(StereoNecError):
    pass


class GaugeError(StereoNecError):
    pass


class ParseError(StereoNecError, ValueError):
    """Malformed CSV row. ``line`` is the 1-based line number in the file."""

    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class StageError(StereoNecError):
    """Wraps an error raised inside a pipeline stage, keeping the stage label."""

    def __init__(self, stage, cause):
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


class NotConvergedWarning(UserWarning):
    pass

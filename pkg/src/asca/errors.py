"""Exception types shared across the pipeline."""


class AscaError(Exception):
    pass


class SegmentationError(AscaError):
    """Fewer energy peaks survived suppression than were requested."""

    def __init__(self, message, key=None):
        super().__init__(message if key is None else f"key {key!r}: {message}")
        self.key = key


class MissingKeyError(AscaError):
    def __init__(self, missing):
        self.missing = list(missing)
        super().__init__("missing recordings for keys: " + " ".join(self.missing))


class InsufficientCorpusError(AscaError):
    pass


class AlphabetError(ValueError):
    pass


class DimensionMismatchError(ValueError):
    pass


class DivergenceError(AscaError):
    pass


class BracketError(AscaError):
    pass


class NonConvergence(AscaError):
    def __init__(self, message, best):
        super().__init__(message)
        self.best = best


class ConfigError(ValueError):
    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class BackendError(AscaError):
    pass


class BackendTimeout(BackendError):
    pass


class BackendProtocolError(BackendError):
    pass


class RateLimited(BackendError):
    pass

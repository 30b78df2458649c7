"""
Exception hierarchy for the keyword-spotting toolkit.

The CLI maps the three families onto exit codes:
ConfigError -> 1, DataError -> 2, NumericalError -> 3.
"""

from typing import Any, List, Optional, Sequence


class KwsError(Exception):
    """Base class for every error raised by kwskit"""

    exit_code = 1


class ConfigError(KwsError, ValueError):
    """Invalid configuration document or command-line usage"""

    exit_code = 1


class DataError(KwsError, ValueError):
    """Input data does not satisfy an operation's preconditions"""

    exit_code = 2


class NumericalError(KwsError, ArithmeticError):
    """A numerical computation cannot proceed"""

    exit_code = 3


# --- data errors -------------------------------------------------------------

class TooShort(DataError):
    def __init__(self, num_samples: int, minimum: int):
        self.num_samples = num_samples
        self.minimum = minimum
        super().__init__(f"Clip has {num_samples} samples, at least {minimum} required")


class UnsupportedFormat(DataError):
    def __init__(self, details: str):
        self.details = details
        super().__init__(f"Unsupported audio format: {details}")


class ParseError(DataError):
    def __init__(self, line: int, message: str = "", source: Optional[str] = None):
        self.line = line
        self.source = source
        where = f"{source}:" if source else "line "
        super().__init__(f"Parse error at {where}{line}: {message}".rstrip(": "))


class DuplicatePath(DataError):
    def __init__(self, path: str):
        self.path = path
        super().__init__(f"Duplicate utterance path: {path}")


class InsufficientPhrases(DataError):
    def __init__(self, available: int, required: int):
        self.available = available
        self.required = required
        super().__init__(f"Need {required} phrases, only {available} available")


class InsufficientUtterances(DataError):
    def __init__(self, phrase: str, available: int, required: int):
        self.phrase = phrase
        self.available = available
        self.required = required
        super().__init__(
            f"Phrase '{phrase}' has {available} utterances, {required} required"
        )


class TooFewUtterances(DataError):
    def __init__(self, phrase: str, available: int, n_enroll: int):
        self.phrase = phrase
        self.available = available
        self.n_enroll = n_enroll
        super().__init__(
            f"Phrase '{phrase}' has {available} utterances; "
            f"need more than {n_enroll} to leave a test set"
        )


class EmptyInput(DataError):
    pass


class EmptyScores(DataError):
    pass


class Empty(DataError):
    pass


class DegenerateCentroid(DataError):
    def __init__(self, index: Any, norm: float):
        self.index = index
        self.norm = norm
        super().__init__(f"Centroid {index} has mean norm {norm:.3e} (< 1e-8)")


class CheckpointFormatError(DataError):
    pass


class FeatureCacheError(DataError):
    pass


class ReportError(DataError):
    pass


# --- numerical errors --------------------------------------------------------

class ShapeMismatch(NumericalError):
    def __init__(self, op: str, *shapes: Sequence[int]):
        self.op = op
        self.shapes = shapes
        shown = ", ".join(str(tuple(s)) for s in shapes)
        super().__init__(f"Shape mismatch in {op}: {shown}")


class NonFinite(NumericalError):
    def __init__(self, where: str):
        self.where = where
        super().__init__(f"Non-finite value produced by {where}")


class NotScalar(NumericalError):
    def __init__(self, shape: Sequence[int]):
        self.shape = tuple(shape)
        super().__init__(f"backward() needs a 1x1 loss, got shape {self.shape}")


class Unsorted(NumericalError):
    def __init__(self, index: int):
        self.index = index
        super().__init__(f"Curve points are not sorted by count at index {index}")


class NonMonotone(NumericalError):
    def __init__(self, indices: List[int]):
        self.indices = list(indices)
        super().__init__(f"Metric increases with count at point indices {self.indices}")


class Unreachable(NumericalError):
    def __init__(self, target: float, best: float):
        self.target = target
        self.best = best
        super().__init__(f"Target {target} is below the best achievable value {best}")

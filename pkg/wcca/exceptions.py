from typing import Optional


class WccaException(Exception):
    pass


class GridMismatch(WccaException):
    """Operands are sampled on different quantile/time grids."""


class BaseMismatch(WccaException):
    """Tangent objects attached to different base measures or curves."""


class SampleMismatch(WccaException):
    """Paired samples disagree on size or subject labels."""


class InvalidDistribution(WccaException):
    pass


class NotInLogImage(InvalidDistribution):
    """id + T is not monotone, so the tangent vector has no Exp image."""


class SupportViolation(InvalidDistribution):
    pass


class DomainError(WccaException, ValueError):
    """A scalar argument lies outside its admissible range."""


class EmptyInput(WccaException):
    pass


class DegenerateDensity(WccaException):
    pass


class RankError(WccaException):
    pass


class SingularTruncation(WccaException):
    pass


class FoldError(WccaException):
    pass


class ParseError(WccaException):
    def __init__(self, message: str, *, path: Optional[str] = None, line: Optional[int] = None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}:"
        if line is not None:
            where = f"{where}{line}:"
        super().__init__(f"{where} {message}" if where else message)


class CorrelationClipWarning(UserWarning):
    pass


class TruncationWarning(UserWarning):
    pass


class CandidateSkippedWarning(UserWarning):
    pass


__all__ = [
    "WccaException",
    "GridMismatch",
    "BaseMismatch",
    "SampleMismatch",
    "InvalidDistribution",
    "NotInLogImage",
    "SupportViolation",
    "DomainError",
    "EmptyInput",
    "DegenerateDensity",
    "RankError",
    "SingularTruncation",
    "FoldError",
    "ParseError",
    "CorrelationClipWarning",
    "TruncationWarning",
    "CandidateSkippedWarning",
]

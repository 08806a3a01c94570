"""Exception hierarchy."""
from __future__ import annotations


class PromptDiagError(Exception):
    """Base class for all package errors."""


class InvalidTensor(PromptDiagError, ValueError):
    pass


class MissingCell(InvalidTensor):
    def __init__(self, missing):
        self.missing = list(missing)
        shown = ", ".join(map(str, self.missing[:10]))
        more = f" (+{len(self.missing) - 10} more)" if len(self.missing) > 10 else ""
        super().__init__(f"{len(self.missing)} missing cell(s): {shown}{more}")


class DuplicateCell(InvalidTensor):
    def __init__(self, coord):
        self.coord = coord
        super().__init__(f"duplicate cell {coord}")


class NonFiniteScore(InvalidTensor):
    pass


class DegenerateDims(PromptDiagError, ValueError):
    pass


class NumericalInconsistency(PromptDiagError, ArithmeticError):
    pass


class InvalidDf(PromptDiagError, ValueError):
    pass


class InvalidCounts(PromptDiagError, ValueError):
    pass


class BudgetTooSmall(PromptDiagError, ValueError):
    pass


class TransportError(PromptDiagError):
    pass


class ExecutorTimeout(TransportError, TimeoutError):
    pass


class EmptyCompletion(PromptDiagError):
    pass


class UnparseableJudgment(PromptDiagError):
    def __init__(self, message, attempts=0, raw=""):
        self.attempts = attempts
        self.raw = raw
        super().__init__(message)


class PartialRun(PromptDiagError):
    def __init__(self, failed):
        self.failed = list(failed)
        super().__init__(f"{len(self.failed)} cell(s) failed after retries")


class EmptyPrompt(PromptDiagError, ValueError):
    pass


class TransformerFailure(PromptDiagError):
    pass

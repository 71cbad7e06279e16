"""Exception hierarchy.

Every error maps onto one of the CLI exit codes: 2 for invalid input,
3 for a violated numerical contract and 4 for an exhausted budget.
"""
from __future__ import annotations


class BrwreLabError(Exception):
    exit_code = 1
    kind = "error"

    def __init__(self, message: str, **details):
        super().__init__(message)
        self.message = message
        self.details = details

    def to_dict(self) -> dict:
        return {
            "error": type(self).__name__,
            "kind": self.kind,
            "message": self.message,
            "details": {k: _plain(v) for k, v in self.details.items()},
        }


def _plain(v):
    if isinstance(v, (str, int, float, bool)) or v is None:
        return v
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    if isinstance(v, dict):
        return {str(k): _plain(x) for k, x in v.items()}
    return repr(v)


class ValidationError(BrwreLabError):
    exit_code = 2
    kind = "validation"


class NumericalContractError(BrwreLabError):
    exit_code = 3
    kind = "numerical_contract"


class BudgetError(BrwreLabError):
    exit_code = 4
    kind = "budget"


# validation failures
class InvalidConfig(ValidationError):
    pass


class InvalidLaw(ValidationError):
    pass


class NotBoundary(ValidationError):
    pass


class LatticeMismatch(ValidationError):
    pass


class LatticeIncompatible(ValidationError):
    pass


class NoCommonTiltPoint(ValidationError):
    pass


class UnsupportedTail(ValidationError):
    pass


class GridTooSmall(ValidationError):
    pass


class DegenerateBinning(ValidationError):
    pass


class TooFewSamples(ValidationError):
    pass


class TooFewUncensored(ValidationError):
    pass


# numerical contracts
class NonFinite(NumericalContractError):
    pass


class NormalizerMismatch(NumericalContractError):
    pass


class ContractViolation(NumericalContractError):
    pass


class CeilingReached(NumericalContractError):
    pass


# budgets
class HorizonExceeded(BudgetError):
    def __init__(self, message: str, best=None, **details):
        super().__init__(message, **details)
        self.best = best


class EnumerationTooLarge(BudgetError):
    pass


class BudgetExceeded(BudgetError):
    pass


class PopulationCapExceeded(BudgetError):
    pass


class CountOverflow(BudgetError):
    pass

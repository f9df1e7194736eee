"""Small result types shared by the certification and bound-checking routines."""

from __future__ import annotations

import math
from dataclasses import dataclass, field


def _jsonable(x):
    if isinstance(x, float) and math.isinf(x):
        return "inf" if x > 0 else "-inf"
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if hasattr(x, "item"):
        return _jsonable(x.item())
    return x


@dataclass
class InequalityReport:
    """Outcome of one numerical inequality check."""

    inequality: str
    lhs: float
    rhs: float
    passed: bool
    details: dict = field(default_factory=dict)

    @property
    def slack(self):
        return self.rhs - self.lhs

    def to_dict(self):
        return _jsonable(
            {
                "inequality": self.inequality,
                "lhs": self.lhs,
                "rhs": self.rhs,
                "slack": self.slack,
                "pass": self.passed,
                "details": self.details,
            }
        )


@dataclass
class CertificationReport:
    """Result of checking a potential against its admissible family."""

    passed: bool
    core_ok: bool
    tail_ok: bool
    c_observed: float
    C_observed: float
    notes: list = field(default_factory=list)

    def to_dict(self):
        return _jsonable(
            {
                "pass": self.passed,
                "core_ok": self.core_ok,
                "tail_ok": self.tail_ok,
                "c_observed": self.c_observed,
                "C_observed": self.C_observed,
                "notes": self.notes,
            }
        )


class CertificationError(ValueError):
    """Raised when an operation requires a certified potential but certification fails."""

    def __init__(self, message, report: CertificationReport | None = None):
        super().__init__(message)
        self.report = report


class GasPhaseError(ValueError):
    """Raised when the activity lies outside the admissible gas-phase window."""


class ExpansionValidityError(ValueError):
    """Raised when the truncated expansion leaves its validity region (e.g. g < 0)."""

"""Core panel containers and validation."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .exceptions import PanelError


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Panel:
    """Balanced N x T outcome matrix with unit and time labels.

    Construction only normalises types; use :func:`validate_panel` (or
    :func:`require_valid`) to check the invariants. Labels default to
    ``0..N-1`` and ``0..T-1``.
    """

    outcomes: np.ndarray
    unit_ids: Sequence = None
    time_ids: Sequence = None

    def __post_init__(self):
        Y = np.asarray(self.outcomes, dtype=np.float64)
        if Y.ndim != 2:
            raise PanelError(f"outcomes must be a 2-D matrix, got shape {Y.shape}")
        object.__setattr__(self, "outcomes", _frozen(Y, np.float64))
        n, t = Y.shape
        units = list(range(n)) if self.unit_ids is None else list(self.unit_ids)
        times = list(range(t)) if self.time_ids is None else list(self.time_ids)
        object.__setattr__(self, "unit_ids", tuple(units))
        object.__setattr__(self, "time_ids", tuple(times))

    @property
    def shape(self):
        return self.outcomes.shape

    @property
    def n_units(self):
        return self.outcomes.shape[0]

    @property
    def n_periods(self):
        return self.outcomes.shape[1]

    def with_outcomes(self, outcomes) -> "Panel":
        return Panel(outcomes, self.unit_ids, self.time_ids)

    def take_units(self, idx) -> "Panel":
        idx = np.asarray(idx)
        return Panel(self.outcomes[idx], [self.unit_ids[i] for i in idx], self.time_ids)

    def take_periods(self, idx) -> "Panel":
        idx = np.asarray(idx)
        return Panel(self.outcomes[:, idx], self.unit_ids, [self.time_ids[i] for i in idx])


@dataclass(frozen=True, eq=False)
class TreatmentMask:
    """Binary N x T assignment matrix; 1 marks a treated cell."""

    assignments: np.ndarray

    def __post_init__(self):
        W = np.asarray(self.assignments)
        if W.ndim != 2:
            raise PanelError(f"assignments must be a 2-D matrix, got shape {W.shape}")
        if W.size and not np.isin(W, (0, 1)).all():
            raise PanelError("assignments must be 0/1")
        object.__setattr__(self, "assignments", _frozen(W, np.int8))

    @classmethod
    def zeros(cls, shape):
        return cls(np.zeros(shape, dtype=np.int8))

    @property
    def shape(self):
        return self.assignments.shape

    @property
    def treated(self) -> np.ndarray:
        return self.assignments.astype(bool)

    @property
    def control(self) -> np.ndarray:
        return ~self.assignments.astype(bool)


class CellIndex(NamedTuple):
    unit: int
    time: int


@dataclass(frozen=True)
class TheoryConstants:
    """Bounds on |mu|, on the derivatives of mu, and on |g|."""

    mu_bar: float
    mu_prime_bar: float
    c_y: float

    def __post_init__(self):
        for name in ("mu_bar", "mu_prime_bar", "c_y"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                raise PanelError(f"{name} must be positive and finite, got {v!r}")


@dataclass
class ValidationReport:
    valid: bool
    errors: list = field(default_factory=list)
    warnings: list = field(default_factory=list)
    bad_cells: list = field(default_factory=list)
    empirical_bound: Optional[float] = None

    def to_dict(self):
        return {
            "valid": self.valid,
            "errors": list(self.errors),
            "warnings": list(self.warnings),
            "bad_cells": [list(c) for c in self.bad_cells],
            "empirical_bound": self.empirical_bound,
        }


def validate_panel(panel: Panel, mask: Optional[TreatmentMask] = None) -> ValidationReport:
    """Check panel (and optional mask) invariants without raising."""
    errors, warnings, bad = [], [], []
    Y = panel.outcomes
    n, t = Y.shape
    if n < 2 or t < 2:
        errors.append(f"panel must be at least 2x2, got {n}x{t}")
    if len(panel.unit_ids) != n:
        errors.append(f"{len(panel.unit_ids)} unit ids for {n} rows")
    if len(panel.time_ids) != t:
        errors.append(f"{len(panel.time_ids)} time ids for {t} columns")
    if len(set(panel.unit_ids)) != len(panel.unit_ids):
        errors.append("unit ids are not unique")
    if len(set(panel.time_ids)) != len(panel.time_ids):
        errors.append("time ids are not unique")

    finite = np.isfinite(Y)
    if not finite.all():
        bad = [CellIndex(int(i), int(s)) for i, s in zip(*np.nonzero(~finite))]
        shown = ", ".join(f"({c.unit}, {c.time})" for c in bad[:5])
        more = f" and {len(bad) - 5} more" if len(bad) > 5 else ""
        errors.append(f"non-finite outcome at cell {shown}{more}")

    if mask is not None:
        if mask.shape != Y.shape:
            errors.append(f"mask shape {mask.shape} does not match panel shape {Y.shape}")
        else:
            W = mask.treated
            for s in np.nonzero(W.all(axis=0))[0]:
                warnings.append(f"period with no control units: {panel.time_ids[s]!r}")
            for i in np.nonzero(W.all(axis=1))[0]:
                warnings.append(f"unit with no control periods: {panel.unit_ids[i]!r}")

    bound = float(np.abs(Y[finite]).max()) if finite.any() else None
    return ValidationReport(not errors, errors, warnings, bad, bound)


def require_valid(panel: Panel, mask: Optional[TreatmentMask] = None) -> ValidationReport:
    report = validate_panel(panel, mask)
    if not report.valid:
        raise PanelError("; ".join(report.errors))
    return report


def empirical_bound(panel: Panel) -> float:
    """max |Y_it| over all cells."""
    return float(np.abs(panel.outcomes).max())


def resolve_cy(panel: Panel, constants: Optional[TheoryConstants] = None,
               inflate: float = 1.0) -> float:
    """Outcome bound: the supplied constant, else the inflated empirical max."""
    if constants is not None:
        return constants.c_y
    if inflate <= 0:
        raise PanelError("inflate must be positive")
    return inflate * empirical_bound(panel)

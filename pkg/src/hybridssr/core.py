"""Domain types, dataset validation, and blinded summary statistics.

Conventions used throughout the package:

* ``r`` is the study indicator: 1 = current study, 0 = historical study.
* ``a`` is the arm: 1 = treated, 0 = control, ``None`` = masked (blinded).
* ``y`` is the outcome on its natural scale, ``None`` = not observed.

Blinding is enforced by state, not by sentinel numbers: an operation that
must stay blind simply cannot obtain a number from a masked field.
All types are immutable after construction and all operations are pure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import DataValidationError

__all__ = [
    "SubjectRecord",
    "Dataset",
    "DesignParams",
    "Violation",
    "GroupSummary",
    "SummaryTable",
    "validate",
    "summarize",
]


@dataclass(frozen=True, slots=True)
class SubjectRecord:
    """One row of trial data."""

    id: str
    r: int
    a: int | None
    x: tuple[float, ...]
    y: float | None

    @property
    def masked(self) -> bool:
        return self.a is None


@dataclass(frozen=True)
class Dataset:
    """An ordered, immutable collection of subject records.

    ``enrollment_ordered`` records whether the row order is enrollment
    order; interim-cut logic relies on it.
    """

    records: tuple[SubjectRecord, ...]
    covariate_names: tuple[str, ...]
    enrollment_ordered: bool = True

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        object.__setattr__(self, "covariate_names", tuple(self.covariate_names))

    @property
    def n(self) -> int:
        return len(self.records)

    @property
    def n_current(self) -> int:
        return sum(1 for rec in self.records if rec.r == 1)

    @property
    def n_historical(self) -> int:
        return sum(1 for rec in self.records if rec.r == 0)

    @property
    def n_covariates(self) -> int:
        return len(self.covariate_names)

    def subset(self, indices: Iterable[int]) -> "Dataset":
        recs = tuple(self.records[i] for i in indices)
        return Dataset(recs, self.covariate_names, self.enrollment_ordered)

    def current(self) -> "Dataset":
        return Dataset(
            tuple(rec for rec in self.records if rec.r == 1),
            self.covariate_names,
            self.enrollment_ordered,
        )

    def historical(self) -> "Dataset":
        return Dataset(
            tuple(rec for rec in self.records if rec.r == 0),
            self.covariate_names,
            self.enrollment_ordered,
        )

    # -- array views used by the numeric modules ------------------------------

    def study_indicator(self) -> np.ndarray:
        return np.fromiter((rec.r for rec in self.records), dtype=float, count=self.n)

    def arm_indicator(self) -> np.ndarray:
        """Arms as floats. Raises if any record is masked."""
        if any(rec.a is None for rec in self.records):
            raise DataValidationError("masked arms: operation requires unblinded treatment labels")
        return np.fromiter((rec.a for rec in self.records), dtype=float, count=self.n)

    def covariate_matrix(self) -> np.ndarray:
        if self.n == 0:
            return np.empty((0, self.n_covariates))
        return np.array([rec.x for rec in self.records], dtype=float)

    def outcome_array(self) -> np.ndarray:
        """Outcomes as floats. Raises if any outcome is absent."""
        if any(rec.y is None for rec in self.records):
            raise DataValidationError("absent outcomes: operation requires observed outcomes")
        return np.fromiter((rec.y for rec in self.records), dtype=float, count=self.n)


def concat(a: Dataset, b: Dataset) -> Dataset:
    if a.covariate_names != b.covariate_names:
        raise DataValidationError("cannot combine datasets with different covariates")
    return Dataset(a.records + b.records, a.covariate_names, a.enrollment_ordered and b.enrollment_ordered)


@dataclass(frozen=True)
class DesignParams:
    """Design-stage quantities for sizing and testing.

    ``alpha`` is the two-sided type I error rate unless ``one_sided`` is
    set, in which case critical values use the one-sided quantile
    directly. ``sigma1_sq``/``sigma0_sq`` are the planning variances for
    the current and historical sources.
    """

    alpha: float = 0.05
    power: float = 0.80
    delta: float = 3.5
    tau0: float = 0.0
    sigma1_sq: float = 100.0
    sigma0_sq: float = 100.0
    alloc_ratio: tuple[int, int] = (2, 1)
    one_sided: bool = False

    def __post_init__(self):
        object.__setattr__(self, "alloc_ratio", tuple(self.alloc_ratio))
        if not 0.0 < self.alpha < 1.0:
            raise DataValidationError(f"alpha must lie in (0,1), got {self.alpha}")
        if not 0.0 < self.power < 1.0:
            raise DataValidationError(f"power must lie in (0,1), got {self.power}")
        if not self.delta > 0.0:
            raise DataValidationError(f"delta must be positive, got {self.delta}")
        if not (self.sigma1_sq > 0.0 and self.sigma0_sq > 0.0):
            raise DataValidationError("planning variances must be positive")
        if len(self.alloc_ratio) != 2 or any(c < 1 for c in self.alloc_ratio):
            raise DataValidationError(f"alloc_ratio components must be >= 1, got {self.alloc_ratio}")


@dataclass(frozen=True)
class Violation:
    """A broken dataset invariant. Violations are data, not exceptions."""

    record_id: str | None
    message: str

    def __str__(self):
        where = self.record_id if self.record_id is not None else "<dataset>"
        return f"{where}: {self.message}"


def validate(dataset: Dataset) -> list[Violation]:
    """Check every type invariant; return one Violation per breach.

    An empty list means every downstream operation will accept the
    dataset without precondition errors. Records with incomplete
    (non-finite) covariates are rejected here rather than imputed.
    """
    violations: list[Violation] = []
    seen: set[str] = set()
    p = dataset.n_covariates
    for rec in dataset.records:
        if rec.id in seen:
            violations.append(Violation(rec.id, "duplicate id"))
        seen.add(rec.id)
        if rec.r not in (0, 1):
            violations.append(Violation(rec.id, f"study indicator must be 0 or 1, got {rec.r}"))
        if rec.a not in (0, 1, None):
            violations.append(Violation(rec.id, f"arm must be 0, 1 or masked, got {rec.a}"))
        if rec.r == 0:
            if rec.a == 1:
                violations.append(Violation(rec.id, "historical subject with a=1"))
            elif rec.a is None:
                violations.append(Violation(rec.id, "historical subject with masked arm"))
        if len(rec.x) != p:
            violations.append(
                Violation(rec.id, f"covariate vector has length {len(rec.x)}, expected {p}")
            )
        if any(not math.isfinite(v) for v in rec.x):
            violations.append(Violation(rec.id, "incomplete covariates (non-finite value)"))
        if rec.y is not None and not math.isfinite(rec.y):
            violations.append(Violation(rec.id, "non-finite outcome"))
    return violations


# -- summaries ----------------------------------------------------------------


def _mean_sd(values: Sequence[float]) -> tuple[float | None, float | None]:
    """Mean and n-1 SD via fsum, so the result is permutation invariant."""
    n = len(values)
    if n == 0:
        return None, None
    mean = math.fsum(values) / n
    if n == 1:
        return mean, None
    var = math.fsum((v - mean) ** 2 for v in values) / (n - 1)
    return mean, math.sqrt(var)


@dataclass(frozen=True)
class GroupSummary:
    label: str
    count: int
    # variable name -> (mean, sd); entries are None when not computable
    stats: dict[str, tuple[float | None, float | None]] = field(default_factory=dict)


@dataclass(frozen=True)
class SummaryTable:
    masked: bool
    groups: tuple[GroupSummary, ...]

    def group(self, label: str) -> GroupSummary:
        for g in self.groups:
            if g.label == label:
                return g
        raise KeyError(label)


def _summarize_group(label: str, records: Sequence[SubjectRecord], names: Sequence[str]) -> GroupSummary:
    stats: dict[str, tuple[float | None, float | None]] = {}
    for j, name in enumerate(names):
        stats[name] = _mean_sd([rec.x[j] for rec in records])
    ys = [rec.y for rec in records if rec.y is not None]
    stats["y"] = _mean_sd(ys)
    return GroupSummary(label, len(records), stats)


def summarize(dataset: Dataset, masked: bool = False) -> SummaryTable:
    """Per-group counts, means and n-1 SDs of covariates and outcome.

    With ``masked=True`` the arm-specific rows are suppressed and outcome
    statistics are pooled over the current study; the ``a`` field of
    current-study records is never read on that path.
    """
    names = dataset.covariate_names
    hist = [rec for rec in dataset.records if rec.r == 0]
    cur = [rec for rec in dataset.records if rec.r == 1]
    groups = [_summarize_group("historical placebo", hist, names)]
    if not masked:
        cur_placebo = [rec for rec in cur if rec.a == 0]
        cur_treated = [rec for rec in cur if rec.a == 1]
        groups.append(_summarize_group("current placebo", cur_placebo, names))
        groups.append(_summarize_group("current treated", cur_treated, names))
    groups.append(_summarize_group("current total", cur, names))
    return SummaryTable(masked, tuple(groups))

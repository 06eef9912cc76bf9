"""Initial sample size and the two blinded re-estimation strategies.

Strategy 1 re-estimates from the weighted one-sample variance of the
pooled blinded outcomes; it never reads treatment labels. Strategy 2
re-estimates from the weight distribution alone; it never reads
outcomes, so it can run on a fully outcome-free interim snapshot.

Size conventions. Strategy 1's formula is the classical per-group size.
Strategy 2's formula natively yields the two-group total (with k = 1 and
constant weights it collapses to the classical total); the re-estimated
size is reported per group (total / 2, then ceiling), and the raw
formula value together with its own ceiling is preserved in
``inputs_echo`` for audit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import Dataset, DesignParams
from .errors import DataValidationError, NumericalError
from .normal import z_quantile
from .propensity import WeightSet

__all__ = ["SSRResult", "initial_sample_size", "ssr_strategy1", "ssr_strategy2"]


@dataclass(frozen=True)
class SSRResult:
    strategy: int
    n_hat: int
    n_hat_raw: float
    s1_sq: float | None = None
    sigma1_hat_sq: float | None = None
    sigma0_hat_sq: float | None = None
    k: float | None = None
    inputs_echo: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.n_hat < 1:
            raise NumericalError(f"re-estimated size must be >= 1, got {self.n_hat}")


def _z_sum(design: DesignParams) -> float:
    """z_{1-alpha/2} + z_{power} (or the one-sided alpha quantile)."""
    tail = design.alpha if design.one_sided else design.alpha / 2.0
    return z_quantile(1.0 - tail) + z_quantile(design.power)


def _echo(design: DesignParams) -> dict:
    return {
        "alpha": design.alpha,
        "power": design.power,
        "delta": design.delta,
        "one_sided": design.one_sided,
    }


def initial_sample_size(design: DesignParams, sigma: float) -> int:
    """Classical per-group size 2 (z_a + z_b)^2 sigma^2 / delta^2, ceiled."""
    if not sigma > 0.0:
        raise DataValidationError(f"planning SD must be positive, got {sigma}")
    raw = 2.0 * _z_sum(design) ** 2 * sigma**2 / design.delta**2
    return max(1, math.ceil(raw))


def ssr_strategy1(interim: Dataset, weights: WeightSet, design: DesignParams) -> SSRResult:
    """Blinded re-estimation from the IPW one-sample outcome variance.

    Every interim subject must have an observed outcome; arms may be
    masked since the formula never touches them.
    """
    if weights.n != interim.n:
        raise DataValidationError("weights were not computed on this dataset")
    try:
        y = interim.outcome_array()
    except DataValidationError:
        raise DataValidationError("strategy 1 requires outcomes on every interim subject")
    w = weights.w_r1 + weights.w_r0
    sum_w = float(w.sum())
    if sum_w <= 1.0:
        raise NumericalError("insufficient effective weight (sum of weights <= 1)")
    ybar = float(np.dot(w, y) / sum_w)
    s1_sq = float(np.dot(w, (y - ybar) ** 2) / (sum_w - 1.0))
    raw = 2.0 * _z_sum(design) ** 2 * s1_sq / design.delta**2
    echo = _echo(design)
    echo["sum_weights"] = sum_w
    echo["weighted_mean"] = ybar
    return SSRResult(
        strategy=1,
        n_hat=max(1, math.ceil(raw)),
        n_hat_raw=raw,
        s1_sq=s1_sq,
        inputs_echo=echo,
    )


def ssr_strategy2(interim: Dataset, weights: WeightSet, design: DesignParams) -> SSRResult:
    """Outcome-free re-estimation from design-effect-inflated planning variances.

    The planning variances are inflated by the within-source ratio
    E[w^2]/E[w]^2, which is 1 exactly for constant weights and grows with
    weight dispersion.
    """
    if weights.n != interim.n:
        raise DataValidationError("weights were not computed on this dataset")
    r = interim.study_indicator()
    n1 = interim.n
    n_c = int(r.sum())
    if n_c == 0 or n_c == n1:
        raise DataValidationError("strategy 2 requires subjects from both sources")
    p1 = n_c / n1
    k = p1 / (1.0 - p1)

    m1 = float(np.mean(r * weights.w_r1))
    if m1 <= 0.0:
        raise NumericalError("zero weight mass in the current source")
    infl1 = p1 * float(np.mean(r * weights.w_r1**2)) / m1**2
    sigma1_hat_sq = design.sigma1_sq * infl1

    m0 = float(np.mean((1.0 - r) * weights.w_r0))
    if m0 <= 0.0:
        raise NumericalError("zero weight mass in the historical source")
    infl0 = (1.0 - p1) * float(np.mean((1.0 - r) * weights.w_r0**2)) / m0**2
    sigma0_hat_sq = design.sigma0_sq * infl0

    total_raw = (1.0 + k) * _z_sum(design) ** 2 * (sigma1_hat_sq / k + sigma0_hat_sq) / design.delta**2
    per_group_raw = total_raw / 2.0
    echo = _echo(design)
    echo["inflation_current"] = infl1
    echo["inflation_historical"] = infl0
    echo["eq_total_raw"] = total_raw
    echo["eq_total_ceil"] = max(1, math.ceil(total_raw))
    return SSRResult(
        strategy=2,
        n_hat=max(1, math.ceil(per_group_raw)),
        n_hat_raw=per_group_raw,
        sigma1_hat_sq=sigma1_hat_sq,
        sigma0_hat_sq=sigma0_hat_sq,
        k=k,
        inputs_echo=echo,
    )

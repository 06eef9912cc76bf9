"""Final-analysis machinery.

The primary test compares the treated mean against a composite control
mean built from current controls and propensity-weighted historical
controls. Writing ``comp_i`` for the composite control weight

    comp_i = (1 - A_i) / P(A=0 | R=1) * w_r1_i + w_r0_i,

the point estimates are

    theta1 = (1/N) sum A_i Y_i / P(A=1)        (full-set P(A=1))
    theta0 = (1/N) sum comp_i Y_i

and the variance is the diagonal M-estimation sandwich

    sigma*^2 = (1/N) sum [ A_i (Y_i - theta1)^2 / P(A=1)^2
                           + comp_i^2 (Y_i - theta0)^2 ].

The statistic (theta1 - theta0 - tau0) / sqrt(sigma*^2 / N) is referred
to the standard normal.

Note on the estimating equation: ``theta1`` above solves its stacked
equation exactly (the treated row is self-normalizing because P(A=1) is
the empirical share), while ``theta0`` solves the control row exactly
only when the composite weights average to 1 over the analysis set,
which holds identically for constant propensities and only
asymptotically otherwise. ``solve_estimating_equation`` returns the
exact root of both rows for any weight set.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import stdtr

from .core import Dataset, DesignParams
from .errors import DataValidationError, HistoricalPoolExhausted, NumericalError
from .normal import two_sided_p
from .propensity import WeightSet

__all__ = [
    "TestResult",
    "sample_historical_controls",
    "ipw_test",
    "estimating_equation_residual",
    "solve_estimating_equation",
    "t_test_unadjusted",
]


@dataclass(frozen=True)
class TestResult:
    theta1_hat: float
    theta0_hat: float
    sigma_star_sq: float
    statistic: float
    p_value: float
    reject: bool
    n_used: int
    method: str = "ipw_z"
    df: int | None = None


def sample_historical_controls(historical: Dataset, m: int, rng: np.random.Generator) -> Dataset:
    """Uniform sample of ``m`` historical subjects without replacement.

    Deterministic given the supplied generator; the output preserves the
    enrollment order of the source. Requesting more than the pool holds
    raises HistoricalPoolExhausted carrying the shortfall.
    """
    if m < 0:
        raise DataValidationError(f"sample size must be >= 0, got {m}")
    if any(rec.r != 0 for rec in historical.records):
        raise DataValidationError("historical pool contains current-study subjects")
    n_h = historical.n
    if m > n_h:
        raise HistoricalPoolExhausted(m, n_h)
    if m == 0:
        return historical.subset(())
    idx = np.sort(rng.choice(n_h, size=m, replace=False))
    return historical.subset(idx.tolist())


def _composite_control_weights(a: np.ndarray, weights: WeightSet) -> np.ndarray:
    if weights.p_a0_given_r1 is None or weights.p_a1 is None:
        raise DataValidationError("masked arms: weights carry no arm shares")
    if weights.p_a0_given_r1 <= 0.0:
        raise DataValidationError("no current-study controls in the analysis set")
    return (1.0 - a) / weights.p_a0_given_r1 * weights.w_r1 + weights.w_r0


def ipw_test(final: Dataset, weights: WeightSet, design: DesignParams) -> TestResult:
    """IPW test of theta1 - theta0 = tau0 with M-estimation variance."""
    if weights.n != final.n:
        raise DataValidationError("weights were not computed on this dataset")
    a = final.arm_indicator()
    y = final.outcome_array()
    n = final.n
    if not (np.any(a == 1.0) and np.any(a == 0.0)):
        raise DataValidationError("both arms must be non-empty")
    r = final.study_indicator()
    if not (np.any(r == 1.0) and np.any(r == 0.0)):
        raise DataValidationError("both sources must be non-empty")
    p_a1 = weights.p_a1
    if p_a1 is None or p_a1 <= 0.0:
        raise DataValidationError("masked arms: test requires unblinded treatment labels")

    comp = _composite_control_weights(a, weights)
    theta1 = float(np.mean(a * y) / p_a1)
    theta0 = float(np.mean(comp * y))
    sigma_star_sq = float(
        np.mean(a * (y - theta1) ** 2) / p_a1**2 + np.mean(comp**2 * (y - theta0) ** 2)
    )
    if sigma_star_sq <= 0.0:
        raise NumericalError("degenerate variance")
    statistic = (theta1 - theta0 - design.tau0) / math.sqrt(sigma_star_sq / n)
    p_value = two_sided_p(statistic)
    return TestResult(
        theta1_hat=theta1,
        theta0_hat=theta0,
        sigma_star_sq=sigma_star_sq,
        statistic=statistic,
        p_value=p_value,
        reject=p_value < design.alpha,
        n_used=n,
    )


def estimating_equation_residual(
    final: Dataset, weights: WeightSet, theta1: float, theta0: float
) -> np.ndarray:
    """The two stacked estimating-equation sums at (theta1, theta0), / N."""
    a = final.arm_indicator()
    y = final.outcome_array()
    comp = _composite_control_weights(a, weights)
    p_a1 = weights.p_a1
    row1 = float(np.mean(a * (y - theta1)) / p_a1)
    row0 = float(np.mean(comp * (y - theta0)))
    return np.array([row1, row0])


def solve_estimating_equation(final: Dataset, weights: WeightSet) -> tuple[float, float]:
    """Exact root of the stacked estimating equation.

    The treated component coincides with ``ipw_test``'s theta1; the
    control component is the self-normalized weighted mean.
    """
    a = final.arm_indicator()
    y = final.outcome_array()
    comp = _composite_control_weights(a, weights)
    theta1 = float(np.sum(a * y) / np.sum(a))
    comp_mass = float(np.sum(comp))
    if comp_mass <= 0.0:
        raise NumericalError("zero composite control mass")
    theta0 = float(np.sum(comp * y) / comp_mass)
    return theta1, theta0


def t_test_unadjusted(pooled: Dataset, design: DesignParams) -> TestResult:
    """Two-sample pooled-variance t-test ignoring source and weighting.

    The control arm is whatever carries a=0 in the supplied dataset,
    i.e. current controls plus any sampled historical subjects.
    """
    a = pooled.arm_indicator()
    y = pooled.outcome_array()
    y1 = y[a == 1.0]
    y0 = y[a == 0.0]
    n1, n0 = y1.size, y0.size
    if n1 < 2 or n0 < 2:
        raise DataValidationError("each arm needs at least 2 subjects for the t-test")
    m1 = float(y1.mean())
    m0 = float(y0.mean())
    df = n1 + n0 - 2
    s2 = float(((n1 - 1) * y1.var(ddof=1) + (n0 - 1) * y0.var(ddof=1)) / df)
    if s2 <= 0.0:
        raise NumericalError("degenerate variance")
    se = math.sqrt(s2 * (1.0 / n1 + 1.0 / n0))
    t = (m1 - m0 - design.tau0) / se
    p_value = 2.0 * float(stdtr(df, -abs(t)))
    return TestResult(
        theta1_hat=m1,
        theta0_hat=m0,
        sigma_star_sq=s2,
        statistic=t,
        p_value=p_value,
        reject=p_value < design.alpha,
        n_used=n1 + n0,
        method="pooled_t",
        df=df,
    )

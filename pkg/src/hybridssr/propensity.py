"""Study-membership propensity model and data-fusion weights.

The propensity is Pr(R=1 | X), fitted by logistic regression via
iteratively reweighted least squares. Covariates are standardized
internally for conditioning and the coefficients are mapped back to the
original scale, so callers never see the standardization.

The fusion weights put half the control-information mass on each source:

    w_r1 = 0.5 * R / P(R=1)
    w_r0 = 0.5 * (1 / P(R=1)) * (1 - R) * e / (1 - e)

with P(R=1) the empirical current-study share and e the propensity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import Dataset
from .errors import DataValidationError, NumericalError

__all__ = [
    "PropensityModel",
    "WeightSet",
    "fit_propensity",
    "predict_propensity",
    "compute_weights",
    "PROPENSITY_CLAMP",
]

PROPENSITY_CLAMP = 1e-12

# keeps exp() finite and flags hopeless separation
_LP_DIVERGENCE = 1e2
_COEF_DIVERGENCE = 1e6


@dataclass(frozen=True)
class PropensityModel:
    """Fitted logistic coefficients, intercept first, original covariate scale."""

    gamma: tuple[float, ...]
    converged: bool
    iterations: int
    final_gradient_norm: float
    ridge_used: bool = False

    @property
    def n_covariates(self) -> int:
        return len(self.gamma) - 1


@dataclass(frozen=True, eq=False)
class WeightSet:
    """Per-subject propensities and fusion weights plus the empirical shares.

    ``p_a1`` and ``p_a0_given_r1`` are None when the current-study arms
    are masked; the weights themselves never need arm labels.
    """

    e: np.ndarray
    w_r1: np.ndarray
    w_r0: np.ndarray
    p_r1: float
    p_a1: float | None
    p_a0_given_r1: float | None

    def __post_init__(self):
        for arr in (self.e, self.w_r1, self.w_r0):
            arr.setflags(write=False)

    @property
    def n(self) -> int:
        return self.e.shape[0]


def _design_matrix(x: np.ndarray) -> np.ndarray:
    n = x.shape[0]
    return np.hstack([np.ones((n, 1)), x])


def _log_likelihood(z: np.ndarray, r: np.ndarray, gamma: np.ndarray) -> float:
    lp = z @ gamma
    # r*lp - log(1 + exp(lp)), stable in both tails
    return float(np.sum(r * lp - np.logaddexp(0.0, lp)))


def _score(z: np.ndarray, r: np.ndarray, gamma: np.ndarray) -> np.ndarray:
    lp = np.clip(z @ gamma, -700.0, 700.0)
    e = 1.0 / (1.0 + np.exp(-lp))
    return z.T @ (r - e)


def _irls(z: np.ndarray, r: np.ndarray, max_iter: int, tol: float, ridge: float):
    """Newton/IRLS iterations. Returns (gamma, iterations, converged, diverged)."""
    n, q = z.shape
    gamma = np.zeros(q)
    penalty = ridge * np.eye(q)
    for it in range(1, max_iter + 1):
        lp = z @ gamma
        if np.max(np.abs(lp)) > _LP_DIVERGENCE or np.max(np.abs(gamma)) > _COEF_DIVERGENCE:
            return gamma, it, False, True
        e = 1.0 / (1.0 + np.exp(-lp))
        w = e * (1.0 - e)
        hess = (z * w[:, None]).T @ z + penalty
        grad = z.T @ (r - e) - ridge * gamma
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            return gamma, it, False, True
        gamma = gamma + step
        if not np.all(np.isfinite(gamma)):
            return gamma, it, False, True
        if np.max(np.abs(step)) < tol:
            return gamma, it, True, False
    return gamma, max_iter, False, False


def fit_propensity(
    dataset: Dataset,
    max_iter: int = 50,
    tol: float = 1e-8,
    ridge: float = 1e-6,
) -> PropensityModel:
    """Fit Pr(R=1 | X) by maximum likelihood.

    Quasi-complete separation (divergent coefficients) triggers a refit
    with the given ridge penalty and is reported as ``converged=False``
    with ``ridge_used=True``. A rank-deficient design raises
    NumericalError("singular design").
    """
    n = dataset.n
    if dataset.n_current == 0 or dataset.n_historical == 0:
        raise DataValidationError("propensity fit requires subjects from both sources")
    r = dataset.study_indicator()
    x = dataset.covariate_matrix()
    p = x.shape[1]

    # standardize for conditioning; back-transform below
    if p:
        mu = x.mean(axis=0)
        sd = x.std(axis=0, ddof=0)
        if np.any(sd == 0.0):
            raise NumericalError("singular design")
        xs = (x - mu) / sd
    else:
        mu = np.empty(0)
        sd = np.empty(0)
        xs = x
    z_std = _design_matrix(xs)
    if np.linalg.matrix_rank(z_std) < z_std.shape[1]:
        raise NumericalError("singular design")

    gamma_std, iters, converged, diverged = _irls(z_std, r, max_iter, tol, 0.0)
    ridge_used = False
    if diverged:
        gamma_std, iters, _, rediverged = _irls(z_std, r, max_iter, tol, ridge)
        if rediverged or not np.all(np.isfinite(gamma_std)):
            raise NumericalError("singular design")
        converged = False
        ridge_used = True

    # back to the original covariate scale
    gamma = np.empty(p + 1)
    if p:
        gamma[1:] = gamma_std[1:] / sd
        gamma[0] = gamma_std[0] - float(np.sum(gamma_std[1:] * mu / sd))
    else:
        gamma[0] = gamma_std[0]

    z_orig = _design_matrix(x)
    grad_norm = float(np.linalg.norm(_score(z_orig, r, gamma)) / n)
    return PropensityModel(tuple(gamma), converged, iters, grad_norm, ridge_used)


def _clamp(e: np.ndarray) -> np.ndarray:
    return np.clip(e, PROPENSITY_CLAMP, 1.0 - PROPENSITY_CLAMP)


def predict_propensity(model: PropensityModel, x: Sequence[float]) -> float:
    """Propensity for one covariate vector, clamped to [1e-12, 1 - 1e-12]."""
    xv = np.asarray(x, dtype=float)
    if xv.ndim != 1 or xv.shape[0] != model.n_covariates:
        raise DataValidationError(
            f"covariate vector of length {xv.shape[0] if xv.ndim == 1 else xv.shape} "
            f"does not match model dimension {model.n_covariates}"
        )
    lp = model.gamma[0] + float(np.dot(model.gamma[1:], xv))
    if lp >= 0:
        e = 1.0 / (1.0 + math.exp(-min(lp, 700.0)))
    else:
        t = math.exp(max(lp, -700.0))
        e = t / (1.0 + t)
    return float(np.clip(e, PROPENSITY_CLAMP, 1.0 - PROPENSITY_CLAMP))


def _predict_matrix(model: PropensityModel, x: np.ndarray) -> np.ndarray:
    gamma = np.asarray(model.gamma)
    lp = np.clip(gamma[0] + x @ gamma[1:], -700.0, 700.0)
    return _clamp(1.0 / (1.0 + np.exp(-lp)))


def compute_weights(
    dataset: Dataset,
    model_or_propensities: PropensityModel | Sequence[float] | np.ndarray,
) -> WeightSet:
    """Fusion weights for every subject.

    Accepts either a fitted model or externally supplied per-subject
    propensities (so simulations can weight by the true model).
    """
    n = dataset.n
    if n == 0:
        raise DataValidationError("empty dataset")
    r = dataset.study_indicator()
    n_c = int(r.sum())
    if n_c == 0 or n_c == n:
        raise DataValidationError("single-source dataset")

    if isinstance(model_or_propensities, PropensityModel):
        e = _predict_matrix(model_or_propensities, dataset.covariate_matrix())
    else:
        e = np.asarray(model_or_propensities, dtype=float).copy()
        if e.shape != (n,):
            raise DataValidationError(f"expected {n} propensities, got shape {e.shape}")
        if np.any(e <= 0.0) or np.any(e >= 1.0):
            bad = int(np.argmax((e <= 0.0) | (e >= 1.0)))
            raise NumericalError(
                f"propensity outside (0,1) for subject {dataset.records[bad].id}"
            )

    hist = r == 0.0
    if np.any(e[hist] >= 1.0 - PROPENSITY_CLAMP / 2):
        bad = int(np.flatnonzero(hist & (e >= 1.0 - PROPENSITY_CLAMP / 2))[0])
        raise NumericalError(
            f"propensity of 1 for historical subject {dataset.records[bad].id}"
        )

    p_r1 = n_c / n
    w_r1 = 0.5 * r / p_r1
    w_r0 = 0.5 / p_r1 * (1.0 - r) * e / (1.0 - e)

    arms = [rec.a for rec in dataset.records]
    if any(a is None for a in arms):
        p_a1 = None
        p_a0r1 = None
    else:
        a = np.array(arms, dtype=float)
        p_a1 = float(a.mean())
        p_a0r1 = float(((1.0 - a) * r).sum() / n_c)
    return WeightSet(e, w_r1, w_r0, p_r1, p_a1, p_a0r1)

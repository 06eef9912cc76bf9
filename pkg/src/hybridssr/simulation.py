"""Monte Carlo study of the trial lifecycle with interim re-estimation.

One replication walks the whole design: generate a historical cohort,
size the trial from its outcome SD, enroll the current study under block
randomization at the design allocation ratio, re-estimate at the interim
cut with both blinded strategies, complete enrollment per analysis arm,
balance the control arm by sampling historical subjects without
replacement, and test. Five analysis arms are recorded per replication:
the IPW test at the Strategy 1 / Strategy 2 / unchanged sizes, and the
unadjusted pooled t-test at the two re-estimated sizes.

Replications are embarrassingly parallel. Each replication's generator
is derived from (master seed, scenario index, replication index) only,
so results are bit-identical for any worker count and any execution
order.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, replace
from multiprocessing import Pool
from typing import Sequence

import numpy as np

from .core import Dataset, DesignParams, SubjectRecord, concat
from .errors import DataValidationError
from .inference import ipw_test, sample_historical_controls, t_test_unadjusted
from .propensity import PropensityModel, compute_weights, fit_propensity
from .ssr import initial_sample_size, ssr_strategy1, ssr_strategy2

__all__ = [
    "GAMMA_WEIGHTING",
    "COVARIATE_NAMES",
    "Scenario",
    "ReplicationOutcome",
    "MetricsRow",
    "MetricsTable",
    "make_scenario",
    "scenario_table",
    "generate_scenario_data",
    "run_replication",
    "run_study_sim",
    "resolve_workers",
]

# coefficients of the study-membership model used for fixed-mode weighting
GAMMA_WEIGHTING = (2.030, -0.019, -0.106, 0.095, -0.009)

COVARIATE_NAMES = ("x1", "x2", "x3", "x4")

# current-study covariate and noise parameters, common to all scenarios
_CUR = {
    "mu1": 75.0,
    "p": 0.5,
    "mu2": 14.0,
    "mu3": 21.0,
    "var1": 8.5**2,
    "var2": 2.8**2,
    "var3": 3.6**2,
    "noise_var": 10.0**2,
}

# historical parameters per scenario:
# (mu1_h, p_h, mu2_h, mu3_h, var1_h, var2_h, var3_h, noise_var_h)
_SCENARIO_HIST = {
    1: (75.0, 0.5, 14.0, 21.0, 8.5**2, 2.8**2, 3.6**2, 10.0**2),
    2: (77.0, 0.4, 14.0, 21.0, 8.5**2, 2.8**2, 3.6**2, 10.0**2),
    3: (77.0, 0.4, 15.0, 20.0, 8.0**2, 3.2**2, 3.7**2, 10.0**2),
    4: (73.0, 0.6, 13.0, 22.0, 8.0**2, 3.2**2, 3.7**2, 10.0**2),
    5: (73.0, 0.6, 13.0, 22.0, 7.0**2, 2.5**2, 3.0**2, 8.0**2),
}


@dataclass(frozen=True)
class Scenario:
    """Data-generating configuration for one simulated trial population.

    Outcomes follow y = b0 + b1*a + x1 + x2 + x3 + beta5*x4 + noise with
    b0 = 1 and unit coefficients on x1..x3; ``treatment_effect`` is b1.
    ``propensity_mode`` selects whether weights come from a per-dataset
    logistic fit ("fit") or from the fixed ``gamma`` vector ("fixed").
    """

    label: str
    mu1_h: float
    p_h: float
    mu2_h: float
    mu3_h: float
    var1_h: float
    var2_h: float
    var3_h: float
    noise_var_h: float
    treatment_effect: float = 0.0
    beta5: float = 1.0
    n_h: int = 169
    propensity_mode: str = "fit"
    gamma: tuple[float, ...] = GAMMA_WEIGHTING

    def __post_init__(self):
        for name in ("var1_h", "var2_h", "var3_h", "noise_var_h"):
            if getattr(self, name) <= 0.0:
                raise DataValidationError(f"{name} must be positive")
        if not 0.0 < self.p_h < 1.0:
            raise DataValidationError("p_h must lie in (0,1)")
        if self.propensity_mode not in ("fit", "fixed"):
            raise DataValidationError(f"unknown propensity_mode {self.propensity_mode!r}")
        if self.n_h < 1:
            raise DataValidationError("n_h must be positive")

    @property
    def beta(self) -> tuple[float, ...]:
        return (1.0, self.treatment_effect, 1.0, 1.0, 1.0, self.beta5)

    def current_marginal_variance(self) -> float:
        return (
            _CUR["var1"]
            + _CUR["p"] * (1.0 - _CUR["p"])
            + _CUR["var2"]
            + self.beta5**2 * _CUR["var3"]
            + _CUR["noise_var"]
        )

    def historical_marginal_variance(self) -> float:
        return (
            self.var1_h
            + self.p_h * (1.0 - self.p_h)
            + self.var2_h
            + self.beta5**2 * self.var3_h
            + self.noise_var_h
        )


def scenario_table() -> dict[int, tuple[float, ...]]:
    """Historical parameter rows of the five built-in scenarios."""
    return dict(_SCENARIO_HIST)


def make_scenario(index: int, treatment_effect: float = 0.0, **overrides) -> Scenario:
    if index not in _SCENARIO_HIST:
        raise DataValidationError(f"unknown scenario index {index}; expected 1..5")
    mu1, p, mu2, mu3, v1, v2, v3, nv = _SCENARIO_HIST[index]
    kwargs = dict(
        label=f"scenario{index}",
        mu1_h=mu1,
        p_h=p,
        mu2_h=mu2,
        mu3_h=mu3,
        var1_h=v1,
        var2_h=v2,
        var3_h=v3,
        noise_var_h=nv,
        treatment_effect=treatment_effect,
    )
    kwargs.update(overrides)
    return Scenario(**kwargs)


# -- data generation -----------------------------------------------------------


def _draw_covariates(n, mu1, p, mu2, mu3, v1, v2, v3, rng) -> np.ndarray:
    x1 = rng.normal(mu1, math.sqrt(v1), n)
    x2 = rng.binomial(1, p, n).astype(float)
    x3 = rng.normal(mu2, math.sqrt(v2), n)
    x4 = rng.normal(mu3, math.sqrt(v3), n)
    return np.column_stack([x1, x2, x3, x4])


def _outcomes(scenario: Scenario, a: np.ndarray, x: np.ndarray, noise_var: float, rng) -> np.ndarray:
    b = scenario.beta
    mean = b[0] + b[1] * a + x[:, 0] + x[:, 1] + x[:, 2] + b[5] * x[:, 3]
    return mean + rng.normal(0.0, math.sqrt(noise_var), a.shape[0])


def _historical_records(scenario: Scenario, rng) -> list[SubjectRecord]:
    n = scenario.n_h
    x = _draw_covariates(
        n,
        scenario.mu1_h,
        scenario.p_h,
        scenario.mu2_h,
        scenario.mu3_h,
        scenario.var1_h,
        scenario.var2_h,
        scenario.var3_h,
        rng,
    )
    a = np.zeros(n)
    y = _outcomes(scenario, a, x, scenario.noise_var_h, rng)
    return [
        SubjectRecord(f"h{i + 1:04d}", 0, 0, tuple(x[i]), float(y[i])) for i in range(n)
    ]


class _CurrentEnrollment:
    """Incremental current-study generator.

    Keeps the block-randomized arm sequence, covariates and outcomes for
    however many subjects have been requested so far; extending consumes
    the same stream, so a replication is deterministic end to end.
    """

    def __init__(self, scenario: Scenario, alloc_ratio: tuple[int, int], rng):
        self._scenario = scenario
        self._rng = rng
        self._block = np.array([1] * alloc_ratio[0] + [0] * alloc_ratio[1], dtype=float)
        self._arm_buffer: list[float] = []
        self.records: list[SubjectRecord] = []
        self._cum_treated: list[int] = []

    def _more_arms(self, count: int) -> np.ndarray:
        need = count - len(self._arm_buffer)
        if need > 0:
            k = math.ceil(need / self._block.size)
            blocks = self._rng.permuted(np.tile(self._block, (k, 1)), axis=1)
            self._arm_buffer.extend(blocks.ravel().tolist())
        out = self._arm_buffer[:count]
        del self._arm_buffer[:count]
        return np.array(out)

    def ensure(self, n: int) -> None:
        have = len(self.records)
        if n <= have:
            return
        extra = n - have
        s = self._scenario
        a = self._more_arms(extra)
        x = _draw_covariates(
            extra, _CUR["mu1"], _CUR["p"], _CUR["mu2"], _CUR["mu3"],
            _CUR["var1"], _CUR["var2"], _CUR["var3"], self._rng,
        )
        y = _outcomes(s, a, x, _CUR["noise_var"], self._rng)
        running = self._cum_treated[-1] if self._cum_treated else 0
        for i in range(extra):
            arm = int(a[i])
            running += arm
            self._cum_treated.append(running)
            self.records.append(
                SubjectRecord(f"c{have + i + 1:06d}", 1, arm, tuple(x[i]), float(y[i]))
            )

    def treated_count(self, upto: int) -> int:
        if upto <= 0:
            return 0
        return self._cum_treated[min(upto, len(self.records)) - 1]

    def prefix_with_treated(self, n_treated: int) -> int:
        """Length of the shortest enrollment prefix holding n_treated treated."""
        idx = int(np.searchsorted(np.asarray(self._cum_treated), n_treated, side="left"))
        if idx >= len(self.records):
            raise DataValidationError("enrollment pool too small")  # pragma: no cover
        return idx + 1


def generate_scenario_data(
    scenario: Scenario, n_current_target: int, rng: np.random.Generator
) -> tuple[Dataset, Dataset]:
    """Generate (current, historical) cohorts for one scenario.

    The historical cohort is drawn first, then the current study with
    2:1-style block randomization; identical streams give bit-identical
    datasets.
    """
    if n_current_target < 3:
        raise DataValidationError("need n_current_target >= 3 for a 2:1 split")
    hist = _historical_records(scenario, rng)
    pool = _CurrentEnrollment(scenario, (2, 1), rng)
    pool.ensure(n_current_target)
    current = Dataset(tuple(pool.records), COVARIATE_NAMES)
    historical = Dataset(tuple(hist), COVARIATE_NAMES)
    return current, historical


@dataclass(frozen=True)
class ReplicationOutcome:
    seed_index: int
    initial_n: int
    ssr1_n: int
    ssr2_n: int
    reject_strategy1: bool
    reject_strategy2: bool
    reject_no_ssr: bool
    reject_no_ad1: bool
    reject_no_ad2: bool
    truncated: bool = False


def _weights_for(final: Dataset, scenario: Scenario):
    if scenario.propensity_mode == "fixed":
        model = PropensityModel(scenario.gamma, True, 0, 0.0)
    else:
        model = fit_propensity(final)
    return compute_weights(final, model)


def run_replication(
    scenario: Scenario,
    design: DesignParams,
    interim_fraction: float,
    rng: np.random.Generator,
    seed_index: int = 0,
) -> ReplicationOutcome:
    """Run one full trial lifecycle and record all five analysis arms."""
    if not 0.0 < interim_fraction < 1.0:
        raise DataValidationError("interim_fraction must lie in (0,1)")
    design = replace(
        design,
        sigma1_sq=scenario.current_marginal_variance(),
        sigma0_sq=scenario.historical_marginal_variance(),
    )

    hist_records = _historical_records(scenario, rng)
    historical = Dataset(tuple(hist_records), COVARIATE_NAMES)
    hist_y = historical.outcome_array()
    hist_sd = float(np.std(hist_y, ddof=1))

    n0 = initial_sample_size(design, hist_sd)
    t_share, c_share = design.alloc_ratio
    planned_current = n0 + math.ceil(n0 * c_share / t_share)
    interim_m = max(3, math.floor(interim_fraction * planned_current))

    pool = _CurrentEnrollment(scenario, design.alloc_ratio, rng)
    pool.ensure(interim_m)
    interim = concat(
        Dataset(tuple(pool.records[:interim_m]), COVARIATE_NAMES), historical
    )
    interim_weights = _weights_for(interim, scenario)
    res1 = ssr_strategy1(interim, interim_weights, design)
    res2 = ssr_strategy2(interim, interim_weights, design)

    treated_enrolled = pool.treated_count(interim_m)
    n_s1 = max(res1.n_hat, treated_enrolled)
    n_s2 = max(res2.n_hat, treated_enrolled)
    targets = {"s1": n_s1, "s2": n_s2, "no_ssr": max(n0, treated_enrolled)}

    # enough current subjects for the largest arm (each block holds t_share treated)
    max_treated = max(targets.values())
    pool.ensure(interim_m + (max_treated - treated_enrolled + 1) * (t_share + c_share))
    while pool.treated_count(len(pool.records)) < max_treated:  # pragma: no cover
        pool.ensure(len(pool.records) + 3 * (t_share + c_share))

    truncated = False
    rejects: dict[str, bool] = {}
    t_rejects: dict[str, bool] = {}
    for arm in ("s1", "s2", "no_ssr"):
        # enrollment runs until the target number of treated subjects is in,
        # never dropping anyone already enrolled at the interim
        prefix = max(pool.prefix_with_treated(targets[arm]), interim_m)
        current_final = Dataset(tuple(pool.records[:prefix]), COVARIATE_NAMES)
        n_treated = pool.treated_count(prefix)
        n_controls = prefix - n_treated
        shortfall = n_treated - n_controls
        if shortfall > historical.n:
            truncated = True
            shortfall = historical.n
        sampled = sample_historical_controls(historical, max(0, shortfall), rng)
        final = concat(current_final, sampled)
        weights = _weights_for(final, scenario)
        rejects[arm] = ipw_test(final, weights, design).reject
        if arm in ("s1", "s2"):
            t_rejects[arm] = t_test_unadjusted(final, design).reject

    return ReplicationOutcome(
        seed_index=seed_index,
        initial_n=n0,
        ssr1_n=n_s1,
        ssr2_n=n_s2,
        reject_strategy1=rejects["s1"],
        reject_strategy2=rejects["s2"],
        reject_no_ssr=rejects["no_ssr"],
        reject_no_ad1=t_rejects["s1"],
        reject_no_ad2=t_rejects["s2"],
        truncated=truncated,
    )


# -- aggregation ----------------------------------------------------------------


@dataclass(frozen=True)
class MetricsRow:
    scenario: str
    effect: float
    reps: int
    rate_strategy1: float
    rate_strategy2: float
    rate_no_ssr: float
    rate_no_ad1: float
    rate_no_ad2: float
    mean_ss: float
    mean_ssr1: float
    mean_ssr2: float
    se_strategy1: float
    se_strategy2: float
    se_no_ssr: float
    se_no_ad1: float
    se_no_ad2: float
    se_ss: float
    se_ssr1: float
    se_ssr2: float
    truncated: int


@dataclass(frozen=True)
class MetricsTable:
    rows: tuple[MetricsRow, ...]

    # column order follows the reporting convention of the study tables
    COLUMNS = (
        "scenario",
        "effect",
        "strategy1",
        "strategy2",
        "no_ssr",
        "no_ad1",
        "no_ad2",
        "n_ss",
        "n_ssr1",
        "n_ssr2",
        "reps",
        "se_strategy1",
        "se_strategy2",
        "se_no_ssr",
        "se_no_ad1",
        "se_no_ad2",
        "se_n_ss",
        "se_n_ssr1",
        "se_n_ssr2",
        "truncated",
    )

    def row(self, scenario: str, effect: float) -> MetricsRow:
        for r in self.rows:
            if r.scenario == scenario and r.effect == effect:
                return r
        raise KeyError((scenario, effect))

    def as_cells(self) -> list[list[str]]:
        out = []
        for r in self.rows:
            out.append(
                [
                    r.scenario,
                    f"{r.effect:g}",
                    f"{r.rate_strategy1:.2f}",
                    f"{r.rate_strategy2:.2f}",
                    f"{r.rate_no_ssr:.2f}",
                    f"{r.rate_no_ad1:.2f}",
                    f"{r.rate_no_ad2:.2f}",
                    f"{r.mean_ss:.1f}",
                    f"{r.mean_ssr1:.1f}",
                    f"{r.mean_ssr2:.1f}",
                    str(r.reps),
                    f"{r.se_strategy1:.3f}",
                    f"{r.se_strategy2:.3f}",
                    f"{r.se_no_ssr:.3f}",
                    f"{r.se_no_ad1:.3f}",
                    f"{r.se_no_ad2:.3f}",
                    f"{r.se_ss:.3f}",
                    f"{r.se_ssr1:.3f}",
                    f"{r.se_ssr2:.3f}",
                    str(r.truncated),
                ]
            )
        return out


def resolve_workers(workers: int | None = None) -> int:
    """Worker count: explicit argument, else HYBRIDSSR_THREADS, else one per CPU."""
    if workers is None:
        env = os.environ.get("HYBRIDSSR_THREADS", "0")
        try:
            workers = int(env)
        except ValueError:
            raise DataValidationError(f"HYBRIDSSR_THREADS must be an integer, got {env!r}")
    if workers < 0:
        raise DataValidationError("worker count must be >= 0")
    if workers == 0:
        workers = os.cpu_count() or 1
    return workers


def _rep_task(args) -> ReplicationOutcome:
    scenario, design, f, master_seed, scen_idx, rep = args
    rng = np.random.default_rng((master_seed, scen_idx, rep))
    return run_replication(scenario, design, f, rng, seed_index=rep)


def _aggregate(scenario: Scenario, outcomes: Sequence[ReplicationOutcome]) -> MetricsRow:
    reps = len(outcomes)

    def rate_and_se(flags):
        p = float(np.mean(flags))
        return 100.0 * p, 100.0 * math.sqrt(p * (1.0 - p) / reps)

    def mean_and_se(values):
        arr = np.array(values, dtype=float)
        se = float(arr.std(ddof=1) / math.sqrt(reps)) if reps > 1 else 0.0
        return float(arr.mean()), se

    r1, se1 = rate_and_se([o.reject_strategy1 for o in outcomes])
    r2, se2 = rate_and_se([o.reject_strategy2 for o in outcomes])
    r3, se3 = rate_and_se([o.reject_no_ssr for o in outcomes])
    r4, se4 = rate_and_se([o.reject_no_ad1 for o in outcomes])
    r5, se5 = rate_and_se([o.reject_no_ad2 for o in outcomes])
    m_ss, se_ss = mean_and_se([o.initial_n for o in outcomes])
    m_s1, se_s1 = mean_and_se([o.ssr1_n for o in outcomes])
    m_s2, se_s2 = mean_and_se([o.ssr2_n for o in outcomes])
    return MetricsRow(
        scenario=scenario.label,
        effect=scenario.treatment_effect,
        reps=reps,
        rate_strategy1=r1,
        rate_strategy2=r2,
        rate_no_ssr=r3,
        rate_no_ad1=r4,
        rate_no_ad2=r5,
        mean_ss=m_ss,
        mean_ssr1=m_s1,
        mean_ssr2=m_s2,
        se_strategy1=se1,
        se_strategy2=se2,
        se_no_ssr=se3,
        se_no_ad1=se4,
        se_no_ad2=se5,
        se_ss=se_ss,
        se_ssr1=se_s1,
        se_ssr2=se_s2,
        truncated=sum(o.truncated for o in outcomes),
    )


def run_study_sim(
    scenarios: Sequence[Scenario],
    design: DesignParams,
    reps: int,
    master_seed: int,
    interim_fraction: float = 0.5,
    workers: int | None = None,
) -> MetricsTable:
    """Aggregate ``reps`` replications of every scenario into one table.

    The per-replication stream depends only on (master_seed, scenario
    position, replication index), so the table is identical for any
    worker count.
    """
    if reps < 1:
        raise DataValidationError("reps must be >= 1")
    if not scenarios:
        raise DataValidationError("no scenarios supplied")
    nworkers = resolve_workers(workers)
    tasks = [
        (scenario, design, interim_fraction, master_seed, scen_idx, rep)
        for scen_idx, scenario in enumerate(scenarios)
        for rep in range(reps)
    ]
    if nworkers > 1 and len(tasks) > 1:
        chunk = max(1, min(64, len(tasks) // (4 * nworkers) or 1))
        with Pool(nworkers) as pool:
            outcomes = pool.map(_rep_task, tasks, chunksize=chunk)
    else:
        outcomes = [_rep_task(t) for t in tasks]
    rows = []
    for scen_idx, scenario in enumerate(scenarios):
        chunk_outcomes = outcomes[scen_idx * reps : (scen_idx + 1) * reps]
        rows.append(_aggregate(scenario, chunk_outcomes))
    return MetricsTable(tuple(rows))

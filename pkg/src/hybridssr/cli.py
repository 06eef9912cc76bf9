"""Command-line interface.

Subcommands: simulate, ssr, test, weights, summarize. Exit codes:
0 success, 1 validation error, 2 numerical error. All errors go to
stderr with the machine-parsable prefix ``E:<code>:``.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import io as hio
from .core import Dataset, DesignParams, summarize, validate
from .errors import DataValidationError, HybridSSRError
from .inference import ipw_test
from .propensity import compute_weights, fit_propensity
from .simulation import MetricsTable, run_study_sim
from .ssr import ssr_strategy1, ssr_strategy2

__all__ = ["main", "run_cli"]


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hybridssr",
        description="Hybrid-control trial toolkit: blinded SSR, IPW testing, simulation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="run the Monte Carlo study")
    p_sim.add_argument("--config", required=True, help="flat JSON config file")
    p_sim.add_argument("--reps", type=int, default=None, help="override sim.reps")
    p_sim.add_argument("--seed", type=int, default=None, help="override sim.seed (required somewhere)")
    p_sim.add_argument("--out", required=True, help="output table path")
    p_sim.add_argument("--format", choices=("csv", "markdown"), default="csv")

    p_ssr = sub.add_parser("ssr", help="blinded sample size re-estimation on a dataset")
    p_ssr.add_argument("--data", required=True)
    p_ssr.add_argument("--design", required=True, help="JSON file with design.* keys")
    p_ssr.add_argument("--strategy", choices=("1", "2", "both"), default="both")
    p_ssr.add_argument("--propensities", default=None, help="optional id,e CSV of propensities")
    p_ssr.add_argument("--format", choices=("csv", "markdown"), default="csv")

    p_test = sub.add_parser("test", help="IPW test of the treatment effect")
    p_test.add_argument("--data", required=True)
    p_test.add_argument("--design", required=True)
    p_test.add_argument("--tau0", type=float, default=None, help="override design.tau0")
    p_test.add_argument("--propensities", default=None)
    p_test.add_argument("--format", choices=("csv", "markdown"), default="csv")

    p_w = sub.add_parser("weights", help="propensities and fusion weights")
    p_w.add_argument("--data", required=True)
    p_w.add_argument("--out", required=True, help="per-subject weight table path")
    p_w.add_argument("--propensities", default=None)
    p_w.add_argument("--format", choices=("csv", "markdown"), default="csv")

    p_sum = sub.add_parser("summarize", help="group summary table")
    p_sum.add_argument("--data", required=True)
    p_sum.add_argument("--masked", action="store_true", help="blinded view")
    p_sum.add_argument("--format", choices=("csv", "markdown"), default="csv")
    return parser


def _load_valid_dataset(path) -> Dataset:
    dataset = hio.load_dataset(path)
    violations = validate(dataset)
    if violations:
        raise DataValidationError(
        "; ".join(str(v) for v in violations)
        )
    return dataset


def _weights_from_args(dataset: Dataset, args):
    if args.propensities:
        e = hio.load_propensities(args.propensities, dataset)
        return compute_weights(dataset, e)
    model = fit_propensity(dataset)
    return compute_weights(dataset, model)


def _cmd_simulate(args) -> int:
    config = hio.load_config(args.config)
    reps = args.reps if args.reps is not None else config.reps
    seed = args.seed if args.seed is not None else config.seed
    if seed is None:
        raise DataValidationError("simulate needs a seed: pass --seed or set sim.seed")
    scenarios = hio.build_scenarios(config)
    table = run_study_sim(
        scenarios,
        config.design,
        reps=reps,
        master_seed=seed,
        interim_fraction=config.interim_fraction,
    )
    text = hio.format_table(MetricsTable.COLUMNS, table.as_cells(), args.format)
    with open(args.out, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    return 0


_SSR_COLUMNS = (
    "strategy", "n_hat", "n_hat_raw", "s1_sq", "sigma1_hat_sq", "sigma0_hat_sq",
    "k", "inflation_current", "inflation_historical", "eq_total_raw",
    "eq_total_ceil", "alpha", "power", "delta",
)


def _ssr_row(res) -> list[str]:
    echo = res.inputs_echo

    def opt(v, spec="%.6f"):
        return "" if v is None else spec % v

    return [
        str(res.strategy),
        str(res.n_hat),
        "%.6f" % res.n_hat_raw,
        opt(res.s1_sq),
        opt(res.sigma1_hat_sq),
        opt(res.sigma0_hat_sq),
        opt(res.k),
        opt(echo.get("inflation_current")),
        opt(echo.get("inflation_historical")),
        opt(echo.get("eq_total_raw")),
        "" if "eq_total_ceil" not in echo else str(echo["eq_total_ceil"]),
        "%g" % echo["alpha"],
        "%g" % echo["power"],
        "%g" % echo["delta"],
    ]


def _cmd_ssr(args) -> int:
    dataset = _load_valid_dataset(args.data)
    design = hio.load_design(args.design)
    weights = _weights_from_args(dataset, args)
    rows = []
    if args.strategy in ("1", "both"):
        rows.append(_ssr_row(ssr_strategy1(dataset, weights, design)))
    if args.strategy in ("2", "both"):
        rows.append(_ssr_row(ssr_strategy2(dataset, weights, design)))
    sys.stdout.write(hio.format_table(_SSR_COLUMNS, rows, args.format))
    return 0


_TEST_COLUMNS = ("theta1_hat", "theta0_hat", "sigma_star_sq", "statistic", "p_value", "reject", "n_used")


def _cmd_test(args) -> int:
    dataset = _load_valid_dataset(args.data)
    design = hio.load_design(args.design)
    if args.tau0 is not None:
        from dataclasses import replace

        design = replace(design, tau0=args.tau0)
    weights = _weights_from_args(dataset, args)
    res = ipw_test(dataset, weights, design)
    row = [
        "%.5f" % res.theta1_hat,
        "%.5f" % res.theta0_hat,
        "%.5f" % res.sigma_star_sq,
        "%.5f" % res.statistic,
        "%.6f" % res.p_value,
        "1" if res.reject else "0",
        str(res.n_used),
    ]
    sys.stdout.write(hio.format_table(_TEST_COLUMNS, [row], args.format))
    return 0


def _quantile_rows(weights, r) -> list[list[str]]:
    rows = []
    for name, values in (("e", weights.e), ("w_r0", weights.w_r0)):
        for source, mask in (("current", r == 1.0), ("historical", r == 0.0)):
            vals = values[mask]
            qs = np.percentile(vals, [0, 25, 50, 75, 100]) if vals.size else [float("nan")] * 5
            rows.append([name, source, str(int(vals.size))] + ["%.6f" % q for q in qs])
    return rows


def _cmd_weights(args) -> int:
    dataset = _load_valid_dataset(args.data)
    weights = _weights_from_args(dataset, args)
    header = ("id", "study", "e", "w_r1", "w_r0")
    rows = [
        [rec.id, str(rec.r), "%.8f" % weights.e[i], "%.8f" % weights.w_r1[i], "%.8f" % weights.w_r0[i]]
        for i, rec in enumerate(dataset.records)
    ]
    with open(args.out, "w", encoding="utf-8", newline="") as fh:
        fh.write(hio.format_table(header, rows, "csv"))
    summary_header = ("variable", "source", "n", "min", "q1", "median", "q3", "max")
    r = dataset.study_indicator()
    sys.stdout.write(hio.format_table(summary_header, _quantile_rows(weights, r), args.format))
    return 0


def _cmd_summarize(args) -> int:
    dataset = hio.load_dataset(args.data)
    violations = validate(dataset)
    if violations:
        raise DataValidationError("; ".join(str(v) for v in violations))
    table = summarize(dataset, masked=args.masked)
    header = ("group", "n", "variable", "mean", "sd")
    rows = []
    for group in table.groups:
        for name, (mean, sd) in group.stats.items():
            rows.append(
                [
                    group.label,
                    str(group.count),
                    name,
                    "" if mean is None else "%.6f" % mean,
                    "" if sd is None else "%.6f" % sd,
                ]
            )
    sys.stdout.write(hio.format_table(header, rows, args.format))
    return 0


_DISPATCH = {
    "simulate": _cmd_simulate,
    "ssr": _cmd_ssr,
    "test": _cmd_test,
    "weights": _cmd_weights,
    "summarize": _cmd_summarize,
}


def run_cli(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    try:
        return _DISPATCH[args.command](args)
    except HybridSSRError as exc:
        print(f"E:{exc.code}: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"E:validation: file not found: {exc.filename}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run_cli())

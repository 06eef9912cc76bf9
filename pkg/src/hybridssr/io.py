"""File formats: the dataset CSV schema, the flat JSON config, and table output.

Dataset CSV schema (strict): header ``id,study,arm,y,<covariate names...>``
with study in {0,1}, arm in {0,1,empty} (empty = masked), y numeric or
empty (empty = not observed). UTF-8, LF line endings, ``.`` decimal
separator. Floats are written in shortest round-trip form, so
load -> save is byte stable.

The config file is one flat JSON object whose keys are dotted names
(``design.alpha``, ``sim.reps``, ...). Unknown keys are rejected.
"""

from __future__ import annotations

import csv
import io as _io
import json
import math
from dataclasses import dataclass
from typing import Sequence

from .core import Dataset, DesignParams, SubjectRecord
from .errors import DataValidationError
from .simulation import Scenario, make_scenario

__all__ = [
    "load_dataset",
    "save_dataset",
    "load_propensities",
    "RunConfig",
    "load_config",
    "load_design",
    "build_scenarios",
    "format_table",
]

_FIXED_COLUMNS = ("id", "study", "arm", "y")


def _parse_float(text: str, line: int, what: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise DataValidationError(f"line {line}: non-numeric {what}: {text!r}")
    if not math.isfinite(value):
        raise DataValidationError(f"line {line}: non-finite {what}: {text!r}")
    return value


def load_dataset(path) -> Dataset:
    """Parse the dataset CSV; every error message carries the line number."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataValidationError("line 1: empty file, expected a header row")
        if tuple(header[: len(_FIXED_COLUMNS)]) != _FIXED_COLUMNS:
            raise DataValidationError(
                f"line 1: header must start with {','.join(_FIXED_COLUMNS)}, "
                f"got {','.join(header[:4])}"
            )
        covariate_names = tuple(header[len(_FIXED_COLUMNS) :])
        if any(not name for name in covariate_names):
            raise DataValidationError("line 1: empty covariate column name")
        records = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataValidationError(
                    f"line {lineno}: expected {len(header)} fields, got {len(row)}"
                )
            rid, study_s, arm_s, y_s = row[:4]
            if study_s not in ("0", "1"):
                raise DataValidationError(f"line {lineno}: study must be 0 or 1, got {study_s!r}")
            if arm_s not in ("", "0", "1"):
                raise DataValidationError(f"line {lineno}: arm must be 0, 1 or empty, got {arm_s!r}")
            arm = None if arm_s == "" else int(arm_s)
            y = None if y_s == "" else _parse_float(y_s, lineno, "outcome")
            x = tuple(
                _parse_float(v, lineno, f"covariate {covariate_names[j]}")
                for j, v in enumerate(row[4:])
            )
            records.append(SubjectRecord(rid, int(study_s), arm, x, y))
    return Dataset(tuple(records), covariate_names)


def _fmt_float(v: float) -> str:
    return repr(float(v))


def save_dataset(dataset: Dataset, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(list(_FIXED_COLUMNS) + list(dataset.covariate_names))
        for rec in dataset.records:
            writer.writerow(
                [
                    rec.id,
                    str(rec.r),
                    "" if rec.a is None else str(rec.a),
                    "" if rec.y is None else _fmt_float(rec.y),
                ]
                + [_fmt_float(v) for v in rec.x]
            )


def load_propensities(path, dataset: Dataset) -> list[float]:
    """Two-column ``id,e`` CSV with one row per dataset subject, any order."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != ("id", "e"):
            raise DataValidationError("line 1: propensity file header must be id,e")
        by_id: dict[str, float] = {}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise DataValidationError(f"line {lineno}: expected 2 fields, got {len(row)}")
            by_id[row[0]] = _parse_float(row[1], lineno, "propensity")
    missing = [rec.id for rec in dataset.records if rec.id not in by_id]
    if missing:
        raise DataValidationError(f"propensity file misses subject(s): {', '.join(missing[:5])}")
    return [by_id[rec.id] for rec in dataset.records]


# -- configuration ---------------------------------------------------------------

_DESIGN_KEYS = {
    "design.alpha": "alpha",
    "design.power": "power",
    "design.delta": "delta",
    "design.tau0": "tau0",
    "design.sigma1_sq": "sigma1_sq",
    "design.sigma0_sq": "sigma0_sq",
    "design.alloc_ratio": "alloc_ratio",
    "design.one_sided": "one_sided",
}
_SCENARIO_OVERRIDE_KEYS = {
    "scenario.mu1_h",
    "scenario.p_h",
    "scenario.mu2_h",
    "scenario.mu3_h",
    "scenario.var1_h",
    "scenario.var2_h",
    "scenario.var3_h",
    "scenario.noise_var_h",
}
_SIM_KEYS = {
    "scenario.ids",
    "scenario.effects",
    "sim.reps",
    "sim.seed",
    "sim.interim_fraction",
    "sim.n_h",
    "sim.beta5",
    "sim.propensity_mode",
}


@dataclass(frozen=True)
class RunConfig:
    design: DesignParams
    scenario_ids: tuple[int, ...] = (1, 2, 3, 4, 5)
    effects: tuple[str, ...] = ("null", "power")
    scenario_overrides: dict | None = None
    reps: int = 2000
    seed: int | None = None
    interim_fraction: float = 0.5
    n_h: int = 169
    beta5: float = 1.0
    propensity_mode: str = "fit"


def _design_from_mapping(obj: dict) -> DesignParams:
    kwargs = {}
    for key, attr in _DESIGN_KEYS.items():
        if key in obj:
            value = obj[key]
            if attr == "alloc_ratio":
                if not (isinstance(value, list) and len(value) == 2):
                    raise DataValidationError("design.alloc_ratio must be a 2-element list")
                value = (int(value[0]), int(value[1]))
            kwargs[attr] = value
    return DesignParams(**kwargs)


def load_design(path) -> DesignParams:
    """A JSON object restricted to design.* keys."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataValidationError(f"invalid JSON in {path}: {exc}")
    if not isinstance(obj, dict):
        raise DataValidationError("design file must hold a JSON object")
    unknown = sorted(set(obj) - set(_DESIGN_KEYS))
    if unknown:
        raise DataValidationError(f"unknown design key(s): {', '.join(unknown)}")
    return _design_from_mapping(obj)


def load_config(path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataValidationError(f"invalid JSON in {path}: {exc}")
    if not isinstance(obj, dict):
        raise DataValidationError("config file must hold a flat JSON object")
    allowed = set(_DESIGN_KEYS) | _SCENARIO_OVERRIDE_KEYS | _SIM_KEYS
    unknown = sorted(set(obj) - allowed)
    if unknown:
        raise DataValidationError(f"unknown config key(s): {', '.join(unknown)}")

    design = _design_from_mapping(obj)

    ids = obj.get("scenario.ids", "all")
    if ids == "all":
        ids = [1, 2, 3, 4, 5]
    if not isinstance(ids, list) or not all(isinstance(i, int) for i in ids):
        raise DataValidationError("scenario.ids must be a list of integers or \"all\"")

    effects = obj.get("scenario.effects", "both")
    if effects == "both":
        effects = ["null", "power"]
    if isinstance(effects, str):
        effects = [effects]
    if not all(e in ("null", "power") for e in effects):
        raise DataValidationError("scenario.effects entries must be \"null\" or \"power\"")

    overrides = {
        key.split(".", 1)[1]: float(obj[key])
        for key in _SCENARIO_OVERRIDE_KEYS
        if key in obj
    }

    mode = obj.get("sim.propensity_mode", "fit")
    if mode not in ("fit", "fixed"):
        raise DataValidationError("sim.propensity_mode must be \"fit\" or \"fixed\"")
    seed = obj.get("sim.seed")
    if seed is not None and (not isinstance(seed, int) or seed < 0 or seed >= 2**64):
        raise DataValidationError("sim.seed must be an unsigned 64-bit integer")

    return RunConfig(
        design=design,
        scenario_ids=tuple(ids),
        effects=tuple(effects),
        scenario_overrides=overrides or None,
        reps=int(obj.get("sim.reps", 2000)),
        seed=seed,
        interim_fraction=float(obj.get("sim.interim_fraction", 0.5)),
        n_h=int(obj.get("sim.n_h", 169)),
        beta5=float(obj.get("sim.beta5", 1.0)),
        propensity_mode=mode,
    )


def build_scenarios(config: RunConfig) -> list[Scenario]:
    """One Scenario per (id, effect); the power effect equals design.delta."""
    scenarios = []
    overrides = dict(config.scenario_overrides or {})
    for idx in config.scenario_ids:
        for effect in config.effects:
            b1 = 0.0 if effect == "null" else config.design.delta
            scenarios.append(
                make_scenario(
                    idx,
                    treatment_effect=b1,
                    label=f"scenario{idx}:{effect}",
                    n_h=config.n_h,
                    beta5=config.beta5,
                    propensity_mode=config.propensity_mode,
                    **overrides,
                )
            )
    return scenarios


# -- tabular output ----------------------------------------------------------------


def format_table(header: Sequence[str], rows: Sequence[Sequence[str]], fmt: str = "csv") -> str:
    if fmt == "csv":
        buf = _io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(list(header))
        for row in rows:
            writer.writerow(list(row))
        return buf.getvalue()
    if fmt == "markdown":
        cells = [list(map(str, header))] + [list(map(str, r)) for r in rows]
        widths = [max(len(row[j]) for row in cells) for j in range(len(header))]
        def line(row):
            return "| " + " | ".join(c.ljust(w) for c, w in zip(row, widths)) + " |"
        out = [line(cells[0]), "| " + " | ".join("-" * w for w in widths) + " |"]
        out.extend(line(r) for r in cells[1:])
        return "\n".join(out) + "\n"
    raise DataValidationError(f"unknown output format {fmt!r}")

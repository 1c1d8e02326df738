"""Indicator-history ingestion, cleaning, monotone calibration and training pairs.

Input table
-----------
Comma-separated UTF-8 with a header row. Mandatory columns:

``segment_id, date, iri, rd`` plus the static segment attributes
``{surface,binder,base,subbase}_{type,thickness,material}``,
``truck_ratio, annual_esal, annual_aadt, annual_precipitation,
freeze_thaw_cycles, freeze_flag, moisture_flag``.

Optional columns ``action_kind, action_thickness_mm, action_material``
record a maintenance action applied on ``date``. A row with an action and
blank ``iri``/``rd`` is a pure action event; a blank indicator on any other
row is a missing value handled by :func:`impute`. Dates are ISO
``YYYY-MM-DD``. Static attributes are read from the first row of each
segment.
"""
from __future__ import annotations

import csv
import datetime as dt
import io
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .domain import (
    KIND_ORDER, LAYERS, ClimateProfile, Layer, MaintenanceAction, StructureProfile, TrafficProfile,
    apply_structure_change, code_index, find_action,
)
from .exceptions import ConfigurationError, SchemaError, ValidationError
from .scaling import NormalizationParams, minmax_fit

INDICATORS = ("IRI", "RD")
STRUCTURE_COLUMNS = tuple(f"{layer}_{attr}" for layer in LAYERS for attr in ("type", "thickness", "material"))
ATTRIBUTE_COLUMNS = STRUCTURE_COLUMNS + (
    "truck_ratio", "annual_esal", "annual_aadt",
    "annual_precipitation", "freeze_thaw_cycles", "freeze_flag", "moisture_flag",
)
MANDATORY_COLUMNS = ("segment_id", "date", "iri", "rd") + ATTRIBUTE_COLUMNS
ACTION_COLUMNS = ("action_kind", "action_thickness_mm", "action_material")
DAYS_PER_YEAR = 365.25
DEFAULT_EPOCH = dt.date(1990, 1, 1)

# 40 surrogate-model inputs
PAIR_FEATURES = (
    tuple(f"orig_{c}" for c in STRUCTURE_COLUMNS)
    + tuple(f"cur_{c}" for c in STRUCTURE_COLUMNS)
    + ("truck_ratio", "annual_esal", "annual_aadt", "truck_aadt", "log_esal", "esal_per_truck")
    + ("annual_precipitation", "freeze_thaw_cycles", "freeze_flag", "moisture_flag")
    + ("initial_indicator", "interval_years")
    + ("maint_kind", "maint_thickness", "maint_material", "maint_date")
)
assert len(PAIR_FEATURES) == 40


def years_between(a: dt.date, b: dt.date) -> float:
    return (b - a).days / DAYS_PER_YEAR


# ---------------------------------------------------------------------------
# dataset types


@dataclass
class IndicatorSeries:
    """Time-ordered observations of one indicator on one segment.

    ``values`` may hold NaN for missing observations until imputed.
    """

    segment_id: str
    indicator: str
    dates: list
    values: np.ndarray
    action_dates: list = field(default_factory=list)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if len(self.dates) != len(self.values):
            raise ValidationError("dates and values differ in length")
        if any(b <= a for a, b in zip(self.dates, self.dates[1:])):
            raise ValidationError(f"{self.segment_id}/{self.indicator}: observation dates must strictly increase")
        finite = self.values[np.isfinite(self.values)]
        if np.any(finite <= 0):
            raise ValidationError(f"{self.segment_id}/{self.indicator}: indicator values must be positive")
        self.action_dates = sorted(self.action_dates)

    def copy(self, **changes) -> "IndicatorSeries":
        return replace(self, **{"dates": list(self.dates), "values": self.values.copy(),
                                "action_dates": list(self.action_dates), **changes})


@dataclass
class SegmentRecord:
    segment_id: str
    original_structure: StructureProfile
    traffic: TrafficProfile
    climate: ClimateProfile
    series: dict  # indicator -> IndicatorSeries
    actions: list  # (date, MaintenanceAction), date order


@dataclass
class RowError:
    line: int
    message: str


@dataclass
class Dataset:
    segments: dict = field(default_factory=dict)  # segment_id -> SegmentRecord
    row_errors: list = field(default_factory=list)

    def __len__(self):
        return len(self.segments)

    def all_series(self):
        for rec in self.segments.values():
            for ind in INDICATORS:
                yield rec.series[ind]


# ---------------------------------------------------------------------------
# ingest


def _parse_float(text, what):
    text = (text or "").strip()
    if text == "":
        return None
    try:
        v = float(text)
    except ValueError:
        raise ValidationError(f"{what}: not a number: {text!r}") from None
    if not math.isfinite(v):
        raise ValidationError(f"{what}: not finite: {text!r}")
    return v


def _attributes(row):
    layers = []
    for layer in LAYERS:
        thick = _parse_float(row[f"{layer}_thickness"], f"{layer}_thickness")
        layer_type, material = row[f"{layer}_type"].strip(), row[f"{layer}_material"].strip()
        code_index("layer_type", layer_type)
        code_index("layer_material", material)
        if thick is None or thick < 0:
            raise ValidationError(f"{layer}_thickness must be a number >= 0")
        layers.append(Layer(layer_type, thick, material))
    nums = {}
    for col in ("truck_ratio", "annual_esal", "annual_aadt", "annual_precipitation", "freeze_thaw_cycles"):
        v = _parse_float(row[col], col)
        if v is None or v < 0:
            raise ValidationError(f"{col} must be a number >= 0")
        nums[col] = v
    if nums["truck_ratio"] > 1:
        raise ValidationError("truck_ratio must lie in [0, 1]")
    freeze, moisture = row["freeze_flag"].strip(), row["moisture_flag"].strip()
    code_index("freeze_flag", freeze)
    code_index("moisture_flag", moisture)
    return (
        StructureProfile(*layers),
        TrafficProfile(nums["truck_ratio"], nums["annual_esal"], nums["annual_aadt"]),
        ClimateProfile(nums["annual_precipitation"], nums["freeze_thaw_cycles"], freeze, moisture),
    )


def ingest(source) -> Dataset:
    """Parse a delimited table (path, text or file object) into a :class:`Dataset`.

    Malformed rows are collected in ``Dataset.row_errors`` with their line
    numbers and excluded; a missing mandatory column raises :class:`SchemaError`.
    """
    if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source and Path(source).exists()):
        text = Path(source).read_text(encoding="utf-8")
    elif isinstance(source, str):
        text = source
    else:
        text = source.read()
    reader = csv.DictReader(io.StringIO(text))
    header = reader.fieldnames or []
    missing = [c for c in MANDATORY_COLUMNS if c not in header]
    if missing:
        raise SchemaError(f"missing mandatory column(s): {', '.join(missing)}")
    has_actions = "action_kind" in header

    ds = Dataset()
    obs: dict[str, dict] = {}
    for row in reader:
        line = reader.line_num
        try:
            sid = row["segment_id"].strip()
            if not sid:
                raise ValidationError("empty segment_id")
            try:
                date = dt.date.fromisoformat(row["date"].strip())
            except ValueError:
                raise ValidationError(f"unparseable date {row['date']!r}") from None
            iri = _parse_float(row["iri"], "iri")
            rd = _parse_float(row["rd"], "rd")
            for name, v in (("iri", iri), ("rd", rd)):
                if v is not None and v <= 0:
                    raise ValidationError(f"{name} must be positive")
            action = None
            if has_actions and (row.get("action_kind") or "").strip():
                action = find_action(row["action_kind"].strip(), _parse_float(row.get("action_thickness_mm"), "action_thickness_mm"),
                                     (row.get("action_material") or "").strip() or None)
            attrs = _attributes(row)
            entry = obs.setdefault(sid, {"attrs": attrs, "points": {}, "actions": {}})
            is_observation = not (action is not None and iri is None and rd is None)
            if is_observation:
                if date in entry["points"]:
                    raise ValidationError(f"duplicate observation date {date} for segment {sid}")
                entry["points"][date] = (iri, rd)
            if action is not None:
                entry["actions"][date] = action
        except ValidationError as exc:
            ds.row_errors.append(RowError(line, str(exc)))

    for sid in sorted(obs):
        entry = obs[sid]
        dates = sorted(entry["points"])
        actions = sorted(entry["actions"].items())
        action_dates = [d for d, _ in actions]
        series = {}
        for k, ind in enumerate(INDICATORS):
            vals = [np.nan if entry["points"][d][k] is None else entry["points"][d][k] for d in dates]
            series[ind] = IndicatorSeries(sid, ind, list(dates), np.array(vals, dtype=float), list(action_dates))
        struct, traffic, climate = entry["attrs"]
        ds.segments[sid] = SegmentRecord(sid, struct, traffic, climate, series, actions)
    return ds


# ---------------------------------------------------------------------------
# encoding helpers


def one_hot(column, vocabulary) -> np.ndarray:
    vocabulary = list(vocabulary)
    index = {v: i for i, v in enumerate(vocabulary)}
    out = np.zeros((len(column), len(vocabulary)))
    for r, code in enumerate(column):
        try:
            out[r, index[code]] = 1.0
        except KeyError:
            raise ValidationError(f"code {code!r} not in vocabulary {vocabulary}") from None
    return out


# ---------------------------------------------------------------------------
# missing data

IMPUTE_POLICIES = ("interpolate", "fill_forward", "delete")


def impute(series: IndicatorSeries, policy: str):
    """Repair missing values. Returns ``(series, counts)``.

    ``interpolate`` is linear in time (ends take the nearest observed value);
    ``fill_forward`` carries the last observation forward and drops leading
    gaps; ``delete`` drops every missing point.
    """
    if policy not in IMPUTE_POLICIES:
        raise ConfigurationError(f"unknown impute policy {policy!r}")
    v = series.values
    miss = ~np.isfinite(v)
    counts = {"interpolated": 0, "filled": 0, "deleted": 0}
    if not miss.any():
        return series.copy(), counts
    if policy == "interpolate":
        if miss.all():
            raise ValidationError(f"{series.segment_id}/{series.indicator}: all values missing, cannot interpolate")
        t = np.array([d.toordinal() for d in series.dates], dtype=float)
        out = v.copy()
        out[miss] = np.interp(t[miss], t[~miss], v[~miss])
        counts["interpolated"] = int(miss.sum())
        return series.copy(values=out), counts
    if policy == "fill_forward":
        out = v.copy()
        keep = np.ones(len(v), dtype=bool)
        last = None
        for i in range(len(v)):
            if miss[i]:
                if last is None:
                    keep[i] = False
                    counts["deleted"] += 1
                else:
                    out[i] = last
                    counts["filled"] += 1
            else:
                last = v[i]
        dates = [d for d, k in zip(series.dates, keep) if k]
        return series.copy(dates=dates, values=out[keep]), counts
    keep = ~miss
    counts["deleted"] = int(miss.sum())
    dates = [d for d, k in zip(series.dates, keep) if k]
    return series.copy(dates=dates, values=v[keep]), counts


# ---------------------------------------------------------------------------
# monotone calibration


@dataclass(frozen=True)
class Change:
    segment_id: str
    indicator: str
    date: dt.date
    old: float
    new: float


def _interval_ids(dates, action_dates):
    # an observation on an action date counts as post-treatment
    return np.searchsorted(np.array([d.toordinal() for d in action_dates], dtype=float),
                           np.array([d.toordinal() for d in dates], dtype=float), side="right")


def calibrate_monotone(series: IndicatorSeries, method: str = "running_max"):
    """Make the series non-decreasing between maintenance actions.

    Within each interval delimited by action dates every value below its
    predecessor is raised to it (``running_max``), or the interval is replaced
    by its isotonic least-squares fit (``isotonic``). Drops across an action
    date are left alone. Returns ``(calibrated, changes)``.
    """
    v = series.values
    if not np.all(np.isfinite(v)):
        raise ValidationError("impute missing values before calibrating")
    out = v.copy()
    groups = _interval_ids(series.dates, series.action_dates)
    for g in np.unique(groups):
        idx = np.flatnonzero(groups == g)
        if method == "running_max":
            out[idx] = np.maximum.accumulate(v[idx])
        elif method == "isotonic":
            from sklearn.isotonic import IsotonicRegression

            seg = v[idx]
            if np.any(np.diff(seg) < 0):
                out[idx] = IsotonicRegression().fit_transform(np.arange(len(idx), dtype=float), seg)
        else:
            raise ConfigurationError(f"unknown calibration method {method!r}")
    changed = np.flatnonzero(out != v)
    changes = [Change(series.segment_id, series.indicator, series.dates[i], float(v[i]), float(out[i]))
               for i in changed]
    return series.copy(values=out), changes


class MonotoneCalibrator(TransformerMixin, BaseEstimator):
    """Transformer wrapper around :func:`calibrate_monotone` for lists of series.

    Stateless: ``fit`` only validates. ``changes_`` holds the report of the
    last ``transform`` call.
    """

    def __init__(self, method="running_max"):
        self.method = method

    def fit(self, X, y=None):
        if self.method not in ("running_max", "isotonic"):
            raise ConfigurationError(f"unknown calibration method {self.method!r}")
        return self

    def transform(self, X):
        out, changes = [], []
        for s in X:
            cs, ch = calibrate_monotone(s, self.method)
            out.append(cs)
            changes.extend(ch)
        self.changes_ = changes
        return out


# ---------------------------------------------------------------------------
# training pairs


@dataclass(frozen=True)
class TrainingPair:
    input: np.ndarray
    target: float
    segment_id: str = ""
    indicator: str = ""

    def __post_init__(self):
        if len(self.input) != 40:
            raise ValidationError(f"training input must have 40 values, got {len(self.input)}")
        if not self.input[PAIR_FEATURES.index("interval_years")] > 0:
            raise ValidationError("interval must be > 0")


def traffic_features(traffic: TrafficProfile) -> list[float]:
    trucks = traffic.annual_aadt * traffic.truck_ratio
    return [
        traffic.truck_ratio, traffic.annual_esal, traffic.annual_aadt,
        trucks, math.log1p(traffic.annual_esal / 1e6),
        traffic.annual_esal / (trucks * 365.0) if trucks > 0 else 0.0,
    ]


def climate_features(climate: ClimateProfile) -> list[float]:
    return [climate.annual_precipitation, climate.freeze_thaw_cycles,
            float(code_index("freeze_flag", climate.freeze_flag)),
            float(code_index("moisture_flag", climate.moisture_flag))]


def maintenance_features(action: MaintenanceAction | None, years_since_epoch: float) -> list[float]:
    if action is None or action.is_do_nothing:
        return [0.0, 0.0, 0.0, 0.0]
    return [
        float(KIND_ORDER.index(action.kind)),
        float(action.thickness or 0.0),
        float(code_index("layer_material", action.material)) if action.material else 0.0,
        years_since_epoch,
    ]


def pair_input(original: StructureProfile, current: StructureProfile, traffic, climate, initial: float,
               interval_years: float, action, action_years_since_epoch: float) -> np.ndarray:
    return np.array(
        original.values() + current.values() + traffic_features(traffic) + climate_features(climate)
        + [initial, interval_years] + maintenance_features(action, action_years_since_epoch),
        dtype=np.float64,
    )


def build_training_pairs(dataset: Dataset, epoch: dt.date = DEFAULT_EPOCH):
    """Consecutive-observation pairs per indicator, inputs in raw units.

    Returns ``(pairs, skipped)`` where ``pairs`` maps indicator -> list of
    :class:`TrainingPair` and ``skipped`` lists ``(segment_id, indicator,
    reason)``. When several actions fall in one interval the latest is encoded.
    """
    pairs = {ind: [] for ind in INDICATORS}
    skipped = []
    for sid, rec in dataset.segments.items():
        for ind in INDICATORS:
            s = rec.series[ind]
            if len(s.dates) < 2:
                skipped.append((sid, ind, f"{len(s.dates)} observation(s)"))
                continue
            if not np.all(np.isfinite(s.values)):
                raise ValidationError(f"{sid}/{ind}: impute missing values before building pairs")
            structure = rec.original_structure
            k = 0  # actions applied so far
            for i in range(len(s.dates) - 1):
                d0, d1 = s.dates[i], s.dates[i + 1]
                while k < len(rec.actions) and rec.actions[k][0] <= d0:
                    structure = apply_structure_change(structure, rec.actions[k][1])
                    k += 1
                inside = [(d, a) for d, a in rec.actions[k:] if d0 < d <= d1]
                action, when = (inside[-1][1], years_between(epoch, inside[-1][0])) if inside else (None, 0.0)
                x = pair_input(rec.original_structure, structure, rec.traffic, rec.climate,
                               float(s.values[i]), years_between(d0, d1), action, when)
                pairs[ind].append(TrainingPair(x, float(s.values[i + 1]), sid, ind))
    return pairs, skipped


def pairs_to_arrays(pairs):
    if not pairs:
        return np.zeros((0, 40)), np.zeros(0)
    return np.stack([p.input for p in pairs]), np.array([p.target for p in pairs])


# ---------------------------------------------------------------------------
# pipeline + files


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def pairs_to_csv(pairs) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(list(PAIR_FEATURES) + ["target"])
    for p in pairs:
        w.writerow([_fmt(v) for v in p.input] + [_fmt(p.target)])
    return buf.getvalue()


def read_pairs_csv(source):
    text = Path(source).read_text() if not isinstance(source, str) or "\n" not in source else source
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    if tuple(header) != PAIR_FEATURES + ("target",):
        raise SchemaError("training-pairs header does not match the 40 documented input columns + target")
    X, y = [], []
    for row in reader:
        vals = [float(v) for v in row]
        X.append(vals[:40])
        y.append(vals[40])
    return np.array(X).reshape(-1, 40), np.array(y)


def dataset_to_csv(ds: Dataset) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(MANDATORY_COLUMNS + ACTION_COLUMNS)
    for sid, rec in ds.segments.items():
        attrs = []
        for layer in rec.original_structure.layers():
            attrs += [layer.type, _fmt(layer.thickness_mm), layer.material]
        t, c = rec.traffic, rec.climate
        attrs += [_fmt(t.truck_ratio), _fmt(t.annual_esal), _fmt(t.annual_aadt),
                  _fmt(c.annual_precipitation), _fmt(c.freeze_thaw_cycles), c.freeze_flag, c.moisture_flag]
        iri, rd = rec.series["IRI"], rec.series["RD"]
        points = {}
        for d, v in zip(iri.dates, iri.values):
            points.setdefault(d, ["", ""])[0] = _fmt(v)
        for d, v in zip(rd.dates, rd.values):
            points.setdefault(d, ["", ""])[1] = _fmt(v)
        actions = dict(rec.actions)
        for d in sorted(set(points) | set(actions)):
            a = actions.get(d)
            act = ["", "", ""] if a is None else [a.kind.value, "" if a.thickness is None else _fmt(a.thickness),
                                                  a.material or ""]
            vals = points.get(d, ["", ""])
            w.writerow([sid, d.isoformat(), vals[0], vals[1]] + attrs + act)
    return buf.getvalue()


@dataclass
class PrepResult:
    dataset: Dataset
    changes: list
    repairs: dict
    pairs: dict
    skipped: list
    norm: NormalizationParams | None


def prepare(source, impute_policy=None, method="running_max", epoch=DEFAULT_EPOCH) -> PrepResult:
    """Ingest -> impute -> calibrate -> pairs -> fit input normalization."""
    impute_policy = impute_policy or {"IRI": "interpolate", "RD": "interpolate"}
    ds = ingest(source)
    repairs = {ind: {"interpolated": 0, "filled": 0, "deleted": 0} for ind in INDICATORS}
    changes = []
    for rec in ds.segments.values():
        for ind in INDICATORS:
            s, counts = impute(rec.series[ind], impute_policy[ind]) if len(rec.series[ind].dates) else (rec.series[ind], {})
            for k, v in counts.items():
                repairs[ind][k] += v
            s, ch = calibrate_monotone(s, method)
            rec.series[ind] = s
            changes.extend(ch)
    pairs, skipped = build_training_pairs(ds, epoch)
    all_inputs = [p.input for ind in INDICATORS for p in pairs[ind]]
    norm = minmax_fit(np.stack(all_inputs), PAIR_FEATURES) if all_inputs else None
    return PrepResult(ds, changes, repairs, pairs, skipped, norm)


def write_outputs(result: PrepResult, out_dir) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "calibrated.csv").write_text(dataset_to_csv(result.dataset))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["segment_id", "indicator", "date", "old", "new"])
    for c in result.changes:
        w.writerow([c.segment_id, c.indicator, c.date.isoformat(), _fmt(c.old), _fmt(c.new)])
    (out / "changes.csv").write_text(buf.getvalue())
    for ind in INDICATORS:
        (out / f"pairs_{ind}.csv").write_text(pairs_to_csv(result.pairs[ind]))
    if result.norm is not None:
        result.norm.save(out / "normalization.json")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["line", "message"])
    for e in result.dataset.row_errors:
        w.writerow([e.line, e.message])
    (out / "row_errors.csv").write_text(buf.getvalue())
    summary = {
        "segments": len(result.dataset),
        "row_errors": len(result.dataset.row_errors),
        "changes": len(result.changes),
        "repairs": result.repairs,
        "pairs": {ind: len(result.pairs[ind]) for ind in INDICATORS},
        "skipped": [list(s) for s in result.skipped],
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


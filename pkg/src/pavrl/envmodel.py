"""Yearly pavement transitions and the episodic maintenance environment.

Two interchangeable transition models share one ``transition(state, action)``
contract: :class:`ParametricModel`, a transparent monotone deterioration law,
and :class:`SurrogateModel`, a pair of trained regression networks (one per
indicator) over the 40 documented inputs.
"""
from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin

from . import neural
from .dataprep import DEFAULT_EPOCH, PAIR_FEATURES, pair_input
from .domain import (
    AGENT_FEATURES, N_ACTIONS, ActionKind, MILL_KINDS, SegmentState, apply_structure_change,
    encode_agent_state, fit_agent_normalization, get_action, validate_state,
)
from .exceptions import ConfigurationError, ValidationError
from .rewardlca import DEFAULT_WEIGHTS, DEFAULT_ZETA, INDICATORS, CostCatalog, RewardLedger, step_area, update_ledger
from .scaling import NormalizationParams, minmax_apply, minmax_fit

MIN_INDICATOR = 1e-6


# ---------------------------------------------------------------------------
# configuration


@dataclass
class Deterioration:
    """Yearly increment ``(base + k_traffic*log(1+ESAL/1e6) + k_climate*FT/100) * (1 + k_age*age)``."""

    base_rate: float
    k_traffic: float
    k_climate: float
    k_age: float

    def rate(self, s: SegmentState) -> float:
        return (self.base_rate
                + self.k_traffic * math.log1p(s.traffic.annual_esal / 1e6)
                + self.k_climate * s.climate.freeze_thaw_cycles / 100.0)

    def increment(self, s: SegmentState) -> float:
        return self.rate(s) * (1.0 + self.k_age * s.age_years)


@dataclass
class ActionEffect:
    """Immediate effect of one treatment kind.

    ``*_reduction`` is the fraction removed from the indicator,
    ``*_per_mm`` adds to it per mm of overlay thickness (capped at
    ``max_reduction``). Reconstruction-class effects set the indicator to at
    most ``*_reset`` (plus ``reset_per_mm_thinner`` for each mm below
    101.6 mm) and reset the age. ``growth_slowdown`` scales the following
    year's deterioration by ``1 - growth_slowdown``.
    """

    iri_reduction: float = 0.0
    rd_reduction: float = 0.0
    iri_per_mm: float = 0.0
    rd_per_mm: float = 0.0
    max_reduction: float = 0.9
    growth_slowdown: float = 0.0
    resets_age: bool = False
    iri_reset: float | None = None
    rd_reset: float | None = None
    reset_per_mm_thinner: float = 0.0
    ac30_rd_bonus: float = 0.0


def default_effects() -> dict:
    return {
        ActionKind.DoNothing.value: ActionEffect(),
        ActionKind.CrackSealingPatching.value: ActionEffect(0.03, 0.02, growth_slowdown=0.30),
        ActionKind.FogSealCoat.value: ActionEffect(0.02, 0.0, growth_slowdown=0.35),
        ActionKind.AggregateSealCoat.value: ActionEffect(0.06, 0.04, growth_slowdown=0.50),
        ActionKind.AsphaltConcreteOverlay.value: ActionEffect(
            0.15, 0.30, iri_per_mm=0.004, rd_per_mm=0.005, growth_slowdown=0.20, ac30_rd_bonus=0.05),
        ActionKind.HotMixRecycledACOverlay.value: ActionEffect(
            0.13, 0.27, iri_per_mm=0.0036, rd_per_mm=0.0045, growth_slowdown=0.20, ac30_rd_bonus=0.05),
        ActionKind.MillOffACOverlayAC.value: ActionEffect(
            resets_age=True, iri_reset=0.8, rd_reset=1.0, reset_per_mm_thinner=0.004, ac30_rd_bonus=0.05),
        ActionKind.MillExistingOverlayRecycledAC.value: ActionEffect(
            resets_age=True, iri_reset=0.9, rd_reset=1.2, reset_per_mm_thinner=0.004, ac30_rd_bonus=0.05),
    }


def default_deterioration() -> dict:
    return {
        "IRI": Deterioration(base_rate=0.03, k_traffic=0.05, k_climate=0.02, k_age=0.08),
        "RD": Deterioration(base_rate=0.30, k_traffic=0.60, k_climate=0.10, k_age=0.06),
    }


@dataclass
class EnvironmentConfig:
    mode: str = "parametric"
    horizon_years: int = 20
    start_year: int = 2021
    deterioration: dict = field(default_factory=default_deterioration)
    effects: dict = field(default_factory=default_effects)
    iri_max: float = 3.5
    rd_max: float = 15.0
    # ranges used to normalize benefit areas; None -> (0, cap)
    area_ranges: dict | None = None
    zeta: float = DEFAULT_ZETA
    weights: dict = field(default_factory=lambda: dict(DEFAULT_WEIGHTS))
    cost_catalog: str | None = None
    surrogate_path: str | None = None
    observation_extras: bool = True
    epoch_year: int = DEFAULT_EPOCH.year

    def __post_init__(self):
        self.deterioration = {k: v if isinstance(v, Deterioration) else Deterioration(**v)
                              for k, v in self.deterioration.items()}
        effects = default_effects()
        for k, v in self.effects.items():
            effects[ActionKind(k).value] = v if isinstance(v, ActionEffect) else ActionEffect(**v)
        self.effects = effects
        self.validate()

    def validate(self):
        if self.mode not in ("parametric", "surrogate"):
            raise ConfigurationError(f"unknown environment mode {self.mode!r}")
        if self.horizon_years < 1:
            raise ConfigurationError("horizon_years must be >= 1")
        if not (self.iri_max > 0 and self.rd_max > 0):
            raise ConfigurationError("indicator caps must be > 0")
        if set(self.deterioration) != set(INDICATORS):
            raise ConfigurationError(f"deterioration coefficients needed for {INDICATORS}")
        for name, d in self.deterioration.items():
            if min(d.base_rate, d.k_traffic, d.k_climate, d.k_age) < 0:
                raise ConfigurationError(f"{name}: deterioration coefficients must be >= 0")
            if d.base_rate <= 0:
                raise ConfigurationError(f"{name}: base_rate must be > 0 so do-nothing always worsens")
        for kind, e in self.effects.items():
            for f in (e.iri_reduction, e.rd_reduction, e.growth_slowdown, e.max_reduction):
                if not 0.0 <= f <= 1.0:
                    raise ConfigurationError(f"{kind}: reduction fractions must lie in [0, 1]")
            if min(e.iri_per_mm, e.rd_per_mm, e.reset_per_mm_thinner, e.ac30_rd_bonus) < 0:
                raise ConfigurationError(f"{kind}: per-mm effects must be >= 0")
        if self.mode == "surrogate" and not self.surrogate_path:
            raise ConfigurationError("surrogate mode needs surrogate_path")

    def caps(self) -> dict:
        return {"IRI": self.iri_max, "RD": self.rd_max}

    def ranges(self) -> dict:
        if self.area_ranges is None:
            return {"IRI": (0.0, self.iri_max), "RD": (0.0, self.rd_max)}
        return {k: tuple(v) for k, v in self.area_ranges.items()}

    def to_dict(self) -> dict:
        d = asdict(self)
        return json.loads(json.dumps(d))

    @classmethod
    def from_dict(cls, d: dict) -> "EnvironmentConfig":
        known = cls.__dataclass_fields__
        unknown = set(d) - set(known)
        if unknown:
            raise ConfigurationError(f"unknown environment config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "EnvironmentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def catalog(self) -> CostCatalog:
        if self.cost_catalog:
            return CostCatalog.load(self.cost_catalog).check_complete()
        return CostCatalog.default()


# ---------------------------------------------------------------------------
# transition models


def _clip(v, cap):
    return min(max(v, MIN_INDICATOR), cap)


class ParametricModel:
    """Action effect at year start, then one year of deterioration."""

    def __init__(self, config: EnvironmentConfig | None = None):
        self.config = config or EnvironmentConfig()

    def apply_action(self, s: SegmentState, action):
        """State right after the treatment, plus the growth factor for the year."""
        a = get_action(action)
        e = self.config.effects[a.kind.value]
        if a.is_do_nothing:
            return s, 1.0
        iri, rd, age = s.iri, s.rd, s.age_years
        thick = a.thickness or 0.0
        bonus = e.ac30_rd_bonus if a.material == "AC-30" else 0.0
        if e.iri_reset is not None:
            extra = e.reset_per_mm_thinner * max(0.0, 101.6 - thick)
            iri = min(iri, e.iri_reset + extra)
            rd = min(rd, e.rd_reset * (1.0 + extra) * (1.0 - bonus))
        else:
            iri *= 1.0 - min(e.iri_reduction + e.iri_per_mm * thick, e.max_reduction)
            rd *= 1.0 - min(e.rd_reduction + e.rd_per_mm * thick + bonus, e.max_reduction)
        if e.resets_age:
            age = 0.0
        caps = self.config.caps()
        post = s.with_(iri=_clip(iri, caps["IRI"]), rd=_clip(rd, caps["RD"]), age_years=age,
                       structure=apply_structure_change(s.structure, a))
        return post, 1.0 - e.growth_slowdown

    def deteriorate(self, s: SegmentState, growth_factor: float = 1.0) -> SegmentState:
        det, caps = self.config.deterioration, self.config.caps()
        return s.with_(
            iri=_clip(s.iri + growth_factor * det["IRI"].increment(s), caps["IRI"]),
            rd=_clip(s.rd + growth_factor * det["RD"].increment(s), caps["RD"]),
            age_years=s.age_years + 1.0,
            year=s.year + 1.0,
        )

    def transition(self, s: SegmentState, action):
        """``(post_action_state, next_state)``."""
        post, growth = self.apply_action(s, action)
        return post, self.deteriorate(post, growth)

    def step(self, s: SegmentState, action) -> SegmentState:
        return self.transition(s, action)[1]


# ---------------------------------------------------------------------------
# surrogate


class SurrogateRegressor(RegressorMixin, BaseEstimator):
    """Fully connected regression network trained with Adam on squared error.

    Inputs are used as given (normalize them first); the target is min-max
    scaled internally and predictions are returned in raw units.
    """

    def __init__(self, hidden=(64, 64), learning_rate=1e-3, epochs=300, batch_size=64,
                 holdout_fraction=0.2, min_samples=20, seed=0):
        self.hidden = hidden
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.holdout_fraction = holdout_fraction
        self.min_samples = min_samples
        self.seed = seed

    def split(self, n):
        rng = np.random.default_rng(self.seed)
        perm = rng.permutation(n)
        n_hold = int(round(n * self.holdout_fraction))
        return np.sort(perm[n_hold:]), np.sort(perm[:n_hold])

    def fit(self, X, y, name="target"):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64).reshape(-1)
        if X.ndim != 2 or len(X) != len(y):
            raise ValidationError("X must be 2-D with one row per target")
        if len(y) < self.min_samples:
            raise ValidationError(f"{name}: {len(y)} samples, need at least {self.min_samples}")
        if not np.all(np.isfinite(X)) or not np.all(np.isfinite(y)):
            raise ValidationError(f"{name}: non-finite training data")
        train, hold = self.split(len(y))
        if np.ptp(y[train]) == 0:
            raise ValidationError(f"{name}: zero-variance target, regression is degenerate")
        self.y_min_, self.y_max_ = float(y[train].min()), float(y[train].max())
        self.n_features_in_ = X.shape[1]
        self.net_ = neural.mlp_new([X.shape[1], *self.hidden, 1], "linear", self.seed)
        opt = neural.Optimizer(self.net_.params, "adam", self.learning_rate)
        rng = np.random.default_rng(self.seed + 1)
        Xt, yt = X[train], self._scale(y[train])
        for _ in range(self.epochs):
            order = rng.permutation(len(yt))
            for start in range(0, len(yt), self.batch_size):
                idx = order[start:start + self.batch_size]
                out, cache = neural.forward(self.net_, Xt[idx])
                err = out[:, 0] - yt[idx]
                grads = neural.backward(self.net_, cache, (2.0 / len(idx)) * err[:, None])
                neural.optimizer_step(self.net_, grads, opt)
        self.report_ = {
            "n_train": int(len(train)), "n_holdout": int(len(hold)),
            "train": _metrics(y[train], self.predict(X[train])),
            "holdout": _metrics(y[hold], self.predict(X[hold])) if len(hold) else None,
        }
        return self

    def _scale(self, y):
        return (y - self.y_min_) / (self.y_max_ - self.y_min_)

    def predict(self, X):
        if not hasattr(self, "net_"):
            raise ConfigurationError("SurrogateRegressor is not fitted")
        X = np.asarray(X, dtype=np.float64)
        single = X.ndim == 1
        if X.shape[-1] != self.n_features_in_:
            raise ValidationError(f"expected {self.n_features_in_} inputs, got {X.shape[-1]}")
        out = neural.forward(self.net_, X[None, :] if single else X)[0][:, 0]
        out = out * (self.y_max_ - self.y_min_) + self.y_min_
        return out[0] if single else out


def _metrics(y, pred):
    resid = y - pred
    ss_res = float((resid ** 2).sum())
    ss_tot = float(((y - y.mean()) ** 2).sum())
    return {"rmse": math.sqrt(ss_res / len(y)), "r2": 1.0 - ss_res / ss_tot if ss_tot > 0 else float("nan")}


@dataclass
class SurrogatePair:
    """One regressor per indicator plus the 40-input normalization."""

    iri_model: SurrogateRegressor
    rd_model: SurrogateRegressor
    norm: NormalizationParams
    caps: dict = field(default_factory=lambda: {"IRI": 3.5, "RD": 15.0})
    report: dict = field(default_factory=dict)

    def model(self, indicator) -> SurrogateRegressor:
        return {"IRI": self.iri_model, "RD": self.rd_model}[indicator]

    # -- file format -------------------------------------------------------
    # npz: "header" (JSON: format, version, norm, caps, target ranges, report,
    # checksum over both payloads) and "iri_model"/"rd_model" (neural model bytes)
    def save(self, path) -> None:
        payload = {ind: np.frombuffer(neural.to_bytes(self.model(ind).net_), dtype=np.uint8) for ind in INDICATORS}
        header = {
            "format": "pavrl-surrogate", "version": 1,
            "features": list(PAIR_FEATURES),
            "norm": self.norm.to_dict(), "caps": self.caps, "report": self.report,
            "targets": {ind: [self.model(ind).y_min_, self.model(ind).y_max_] for ind in INDICATORS},
            "params": {ind: self.model(ind).get_params() for ind in INDICATORS},
            "checksum": _sha(payload["IRI"].tobytes() + payload["RD"].tobytes()),
        }
        buf = io.BytesIO()
        np.savez(buf, header=np.frombuffer(json.dumps(header, sort_keys=True, default=list).encode(), dtype=np.uint8),
                 iri_model=payload["IRI"], rd_model=payload["RD"])
        Path(path).write_bytes(buf.getvalue())

    @classmethod
    def load(cls, path) -> "SurrogatePair":
        with np.load(Path(path), allow_pickle=False) as z:
            header = json.loads(bytes(z["header"]).decode())
            blobs = {"IRI": bytes(z["iri_model"]), "RD": bytes(z["rd_model"])}
        if header.get("format") != "pavrl-surrogate" or header.get("version") != 1:
            raise ValidationError("not a version-1 surrogate model file")
        if _sha(blobs["IRI"] + blobs["RD"]) != header["checksum"]:
            raise ValidationError("surrogate checksum mismatch; file is corrupted")
        models = {}
        for ind in INDICATORS:
            params = dict(header["params"][ind])
            params["hidden"] = tuple(params["hidden"])
            reg = SurrogateRegressor(**params)
            reg.net_, _ = neural.from_bytes(blobs[ind])
            reg.y_min_, reg.y_max_ = header["targets"][ind]
            reg.n_features_in_ = 40
            models[ind] = reg
        return cls(models["IRI"], models["RD"], NormalizationParams.from_dict(header["norm"]),
                   header["caps"], header.get("report", {}))


def _sha(b: bytes) -> str:
    import hashlib

    return hashlib.sha256(b).hexdigest()


def train_surrogate(pairs: dict, regressor_params: dict | None = None, caps=None):
    """Fit one regressor per indicator on raw 40-input pairs.

    ``pairs`` maps indicator -> ``(X, y)`` arrays or list of ``TrainingPair``.
    Returns ``(SurrogatePair, report)``.
    """
    from .dataprep import pairs_to_arrays

    arrays = {}
    for ind in INDICATORS:
        data = pairs[ind]
        arrays[ind] = pairs_to_arrays(data) if isinstance(data, list) else (np.asarray(data[0]), np.asarray(data[1]))
        if arrays[ind][0].ndim != 2 or arrays[ind][0].shape[1] != 40:
            raise ValidationError(f"{ind}: training inputs must have 40 columns")
    params = dict(regressor_params or {})
    min_samples = params.get("min_samples", SurrogateRegressor().min_samples)
    for ind in INDICATORS:
        if len(arrays[ind][1]) < min_samples:
            raise ValidationError(f"{ind}: {len(arrays[ind][1])} training pairs, need at least {min_samples}")
    norm = minmax_fit(np.vstack([arrays[ind][0] for ind in INDICATORS]), PAIR_FEATURES)
    models, report = {}, {}
    for ind in INDICATORS:
        X, y = arrays[ind]
        models[ind] = SurrogateRegressor(**params).fit(minmax_apply(X, norm), y, name=ind)
        report[ind] = models[ind].report_
    sp = SurrogatePair(models["IRI"], models["RD"], norm,
                       dict(caps or {"IRI": EnvironmentConfig().iri_max, "RD": EnvironmentConfig().rd_max}), report)
    return sp, report


def predict_next(sp: SurrogatePair, x, indicator: str) -> float:
    """Next value of ``indicator`` for a normalized 40-input vector, in raw units."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (40,):
        raise ValidationError(f"surrogate input must have 40 values, got shape {x.shape}")
    return _clip(float(sp.model(indicator).predict(x)), sp.caps[indicator])


class SurrogateModel:
    """Transition model backed by a :class:`SurrogatePair`."""

    def __init__(self, sp: SurrogatePair, config: EnvironmentConfig | None = None):
        self.sp = sp
        self.config = config or EnvironmentConfig()
        self.sp.caps = self.config.caps()

    def assemble(self, s: SegmentState, action) -> dict:
        """Normalized 40-input vector per indicator for one yearly step."""
        a = get_action(action)
        when = float(s.year - self.config.epoch_year)
        out = {}
        for ind, value in (("IRI", s.iri), ("RD", s.rd)):
            raw = pair_input(s.original_structure, s.structure, s.traffic, s.climate, value, 1.0, a, when)
            out[ind] = minmax_apply(raw, self.sp.norm)
        return out

    def transition(self, s: SegmentState, action):
        a = get_action(action)
        x = self.assemble(s, a)
        post = s.with_(structure=apply_structure_change(s.structure, a),
                       age_years=0.0 if a.kind in MILL_KINDS else s.age_years)
        nxt = post.with_(iri=predict_next(self.sp, x["IRI"], "IRI"), rd=predict_next(self.sp, x["RD"], "RD"),
                         age_years=post.age_years + 1.0, year=s.year + 1.0)
        # the networks only predict year-end values; the post-treatment point is the pre-treatment one
        return s.with_(structure=post.structure, age_years=post.age_years), nxt

    def step(self, s: SegmentState, action) -> SegmentState:
        return self.transition(s, action)[1]


def make_model(config: EnvironmentConfig, surrogate: SurrogatePair | None = None):
    if config.mode == "parametric":
        return ParametricModel(config)
    sp = surrogate if surrogate is not None else SurrogatePair.load(config.surrogate_path)
    return SurrogateModel(sp, config)


def synthesize_pairs(model, sampler, n, seed=0, action_probs=None):
    """Raw ``(X, y)`` pairs per indicator from one-year transitions of ``model``."""
    rng = np.random.default_rng(seed)
    X, y = {i: [] for i in INDICATORS}, {i: [] for i in INDICATORS}
    epoch = model.config.epoch_year
    for _ in range(n):
        s = sampler.sample(rng)
        a = get_action(int(rng.choice(N_ACTIONS, p=action_probs)))
        nxt = model.step(s, a)
        for ind, v0, v1 in (("IRI", s.iri, nxt.iri), ("RD", s.rd, nxt.rd)):
            X[ind].append(pair_input(s.original_structure, s.structure, s.traffic, s.climate, v0, 1.0, a,
                                     float(s.year - epoch)))
            y[ind].append(v1)
    return {i: (np.array(X[i]), np.array(y[i])) for i in INDICATORS}


# ---------------------------------------------------------------------------
# initial-state samplers


class FixedFleetSampler:
    """Uniform draw from a fixed list of segments."""

    def __init__(self, fleet):
        self.fleet = list(fleet)
        if not self.fleet:
            raise ConfigurationError("initial-state fleet is empty")

    def sample(self, rng) -> SegmentState:
        return self.fleet[int(rng.integers(len(self.fleet)))]


class RandomizedSampler:
    """Template segment with selected numeric fields drawn uniformly from ranges.

    ``ranges`` keys: ``iri``, ``rd``, ``age_years``, ``annual_esal``,
    ``annual_aadt``, ``truck_ratio``, ``annual_precipitation``,
    ``freeze_thaw_cycles``.
    """

    TRAFFIC = ("annual_esal", "annual_aadt", "truck_ratio")
    CLIMATE = ("annual_precipitation", "freeze_thaw_cycles")

    def __init__(self, template: SegmentState, ranges: dict):
        self.template = template
        self.ranges = {k: (float(lo), float(hi)) for k, (lo, hi) in ranges.items()}
        for k, (lo, hi) in self.ranges.items():
            if hi < lo:
                raise ConfigurationError(f"range for {k} has hi < lo")
            if k not in ("iri", "rd", "age_years") + self.TRAFFIC + self.CLIMATE:
                raise ConfigurationError(f"cannot randomize field {k!r}")

    def sample(self, rng) -> SegmentState:
        draw = {k: float(rng.uniform(lo, hi)) for k, (lo, hi) in sorted(self.ranges.items())}
        s = self.template
        traffic = s.traffic.__class__(**{**s.traffic.__dict__, **{k: v for k, v in draw.items() if k in self.TRAFFIC}})
        climate = s.climate.__class__(**{**s.climate.__dict__, **{k: v for k, v in draw.items() if k in self.CLIMATE}})
        top = {k: v for k, v in draw.items() if k in ("iri", "rd", "age_years")}
        return s.with_(traffic=traffic, climate=climate, **top)


def reset(sampler, seed) -> SegmentState:
    """Initial state drawn from ``sampler``; deterministic given ``seed``."""
    return validate_state(sampler.sample(np.random.default_rng(seed)))


def baseline_trajectory(model, s0: SegmentState, horizon: int):
    """``horizon + 1`` (iri, rd) points under repeated do-nothing."""
    pts = [(s0.iri, s0.rd)]
    s = s0
    for _ in range(horizon):
        s = model.step(s, 0)
        pts.append((s.iri, s.rd))
    return pts


# ---------------------------------------------------------------------------
# episodic environment

N_EXTRAS = 7


class MaintenanceEnv:
    """Per-segment planning episode with the cost-effectiveness reward.

    ``reset(seed=None) -> obs`` and ``step(action_id) -> (obs, reward, done,
    info)``. Observations are the 21 encoded agent features, followed (when
    ``config.observation_extras``) by year progress, scaled age, scaled
    cumulative discounted cost, the two cumulative benefit areas and the
    encoded do-nothing IRI/RD for the current year.
    """

    n_actions = N_ACTIONS

    def __init__(self, config: EnvironmentConfig | None = None, sampler=None, norm: NormalizationParams | None = None,
                 catalog: CostCatalog | None = None, model=None, seed=None):
        self.config = config or EnvironmentConfig()
        if sampler is None:
            raise ConfigurationError("an initial-state sampler is required")
        self.sampler = sampler
        self.model = model if model is not None else make_model(self.config)
        self.catalog = catalog if catalog is not None else self.config.catalog()
        if norm is None:
            if not isinstance(sampler, FixedFleetSampler):
                raise ConfigurationError("pass fitted agent normalization for non-fleet samplers")
            norm = fit_agent_normalization(sampler.fleet)
        if norm.names != AGENT_FEATURES:
            raise ConfigurationError("agent normalization must cover the 21 agent features")
        self.norm = norm
        self.ranges = self.config.ranges()
        self.horizon = self.config.horizon_years
        self.observation_size = len(AGENT_FEATURES) + (N_EXTRAS if self.config.observation_extras else 0)
        self.rng = np.random.default_rng(seed)
        self.state = None

    # -- episode -----------------------------------------------------------
    def reset(self, seed=None, state: SegmentState | None = None):
        if seed is not None:
            self.rng = np.random.default_rng(seed)
        s0 = state if state is not None else self.sampler.sample(self.rng)
        s0 = validate_state(s0.with_(year=float(self.config.start_year)))
        self.s0 = s0
        self.state = s0
        self.t = 0
        self.baseline = baseline_trajectory(self.model, s0, self.horizon)
        self.ledger = RewardLedger(self.catalog, self.config.zeta, dict(self.config.weights))
        self.trajectory = []
        return self.observe()

    def observe(self) -> np.ndarray:
        x = encode_agent_state(self.state, self.norm)
        if not self.config.observation_extras:
            return x
        b = self.baseline[min(self.t, self.horizon)]
        iri_i, rd_i = AGENT_FEATURES.index("iri"), AGENT_FEATURES.index("rd")
        extras = [
            self.t / self.horizon,
            self.state.age_years / 40.0,
            self.ledger.total_cost / 1e6,
            self.ledger.total_area["IRI"] / 10.0,
            self.ledger.total_area["RD"] / 10.0,
            (b[0] - self.norm.offset()[iri_i]) / self.norm.span()[iri_i],
            (b[1] - self.norm.offset()[rd_i]) / self.norm.span()[rd_i],
        ]
        return np.concatenate([x, extras])

    def step(self, action):
        if self.state is None:
            raise ConfigurationError("call reset() before step()")
        if self.t >= self.horizon:
            raise ConfigurationError("episode is over; call reset()")
        a = get_action(action)
        post, nxt = self.model.transition(self.state, a)
        b0, b1 = self.baseline[self.t], self.baseline[self.t + 1]
        rec = {
            "t": self.t, "action": a.id,
            "baseline_IRI": (b0[0], b1[0]), "actual_IRI": (post.iri, nxt.iri),
            "baseline_RD": (b0[1], b1[1]), "actual_RD": (post.rd, nxt.rd),
            "pre_IRI": self.state.iri, "pre_RD": self.state.rd,
        }
        areas = {ind: step_area(rec[f"baseline_{ind}"], rec[f"actual_{ind}"], self.ranges[ind]) for ind in INDICATORS}
        prev = self.ledger.effcost_history[-1] if self.ledger.effcost_history else 0.0
        update_ledger(self.ledger, areas, a, self.t)
        r = self.ledger.effcost_history[-1] - prev
        rec["reward"] = r
        self.trajectory.append(rec)
        self.state = nxt
        self.t += 1
        done = self.t >= self.horizon
        return self.observe(), r, done, {"state": nxt, "areas": areas, "record": rec}

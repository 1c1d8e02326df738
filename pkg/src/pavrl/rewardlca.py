"""Reward engine: benefit areas, discounted LCCA + LCA costs and cost-effectiveness.

Costs are in currency units per segment application, emissions in kg, carbon
price ``zeta`` in currency per metric ton CO2-equivalent.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .domain import N_ACTIONS, ActionKind, MILL_KINDS, OVERLAY_KINDS, build_action_catalog, get_action
from .exceptions import ConfigurationError, SequencingError, ValidationError

POLLUTANTS = ("SO2", "CO2", "NOx", "PM2.5", "CO", "CH4", "N2O")
STAGES = ("production", "transportation", "construction")

# None marks pollutants with no global-warming factor; they are tracked but weigh zero
GWP = {"SO2": None, "CO2": 1.0, "NOx": None, "PM2.5": None, "CO": 3.0, "CH4": 21.0, "N2O": 310.0}

DISCOUNT_BASE = 1.04
DEFAULT_WEIGHTS = {"IRI": 0.55, "RD": 0.45}
DEFAULT_ZETA = 50.0
INDICATORS = ("IRI", "RD")


@dataclass(frozen=True)
class EmissionsInventory:
    """Pollutant masses (kg) by stage; ``masses[stage][pollutant]``."""

    masses: dict = field(default_factory=dict)

    def __post_init__(self):
        full = {}
        for stage, row in self.masses.items():
            if stage not in STAGES:
                raise ValidationError(f"unknown stage {stage!r}")
            for p in row:
                if p not in POLLUTANTS:
                    raise ValidationError(f"unknown pollutant {p!r}")
        for stage in STAGES:
            row = self.masses.get(stage, {})
            full[stage] = {p: float(row.get(p, 0.0)) for p in POLLUTANTS}
            for p, v in full[stage].items():
                if not np.isfinite(v) or v < 0:
                    raise ValidationError(f"{stage}/{p} mass must be finite and >= 0 (got {v})")
        object.__setattr__(self, "masses", full)

    @classmethod
    def single(cls, pollutant: str, kg: float, stage: str = "production") -> "EmissionsInventory":
        return cls({stage: {pollutant: kg}})

    def total(self) -> dict[str, float]:
        return {p: sum(self.masses[s][p] for s in STAGES) for p in POLLUTANTS}

    def __add__(self, other: "EmissionsInventory") -> "EmissionsInventory":
        return EmissionsInventory({
            s: {p: self.masses[s][p] + other.masses[s][p] for p in POLLUTANTS} for s in STAGES
        })

    def scaled(self, factor: float) -> "EmissionsInventory":
        return EmissionsInventory({s: {p: v * factor for p, v in row.items()} for s, row in self.masses.items()})

    def is_zero(self) -> bool:
        return all(v == 0.0 for row in self.masses.values() for v in row.values())


def gwp_co2e(e: EmissionsInventory, gwp: dict | None = None) -> float:
    """Metric tons CO2-equivalent of an inventory."""
    factors = GWP if gwp is None else gwp
    total = e.total()
    kg = 0.0
    for p in POLLUTANTS:
        f = factors.get(p)
        if f is not None:
            kg += f * total[p]
    return kg / 1000.0


@dataclass(frozen=True)
class CostEntry:
    economic_cost: float
    emissions: EmissionsInventory


class CostCatalog:
    """Economic cost and emissions inventory for every action id.

    The shipped catalog (``data/cost_catalog.json``) holds placeholder values,
    not published unit costs.
    """

    def __init__(self, entries: dict[int, CostEntry], currency: str = "USD", gwp: dict | None = None, note: str = ""):
        self.entries = dict(entries)
        self.currency = currency
        self.gwp = dict(GWP if gwp is None else gwp)
        self.note = note
        for aid, entry in self.entries.items():
            if entry.economic_cost < 0 or not np.isfinite(entry.economic_cost):
                raise ConfigurationError(f"action {aid}: economic cost must be finite and >= 0")
        dn = self.entries.get(0)
        if dn is not None and (dn.economic_cost != 0 or not dn.emissions.is_zero()):
            raise ConfigurationError("DoNothing must have zero cost and zero emissions")

    def entry(self, action) -> CostEntry:
        a = get_action(action)
        try:
            return self.entries[a.id]
        except KeyError:
            raise ConfigurationError(f"action {a.id} ({a.label}) missing from cost catalog") from None

    def economic_cost(self, action) -> float:
        return self.entry(action).economic_cost

    def co2e(self, action) -> float:
        return gwp_co2e(self.entry(action).emissions, self.gwp)

    def check_complete(self) -> "CostCatalog":
        missing = [i for i in range(N_ACTIONS) if i not in self.entries]
        if missing:
            raise ConfigurationError(f"cost catalog missing action ids {missing}")
        return self

    # -- file format -------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "format": "pavrl-cost-catalog/1",
            "currency": self.currency,
            "note": self.note,
            "gwp": self.gwp,
            "actions": {
                str(aid): {
                    "economic_cost": e.economic_cost,
                    "emissions_kg": e.emissions.masses,
                }
                for aid, e in sorted(self.entries.items())
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CostCatalog":
        entries = {}
        for key, row in d["actions"].items():
            entries[int(key)] = CostEntry(float(row["economic_cost"]), EmissionsInventory(row.get("emissions_kg", {})))
        return cls(entries, currency=d.get("currency", "USD"), gwp=d.get("gwp"), note=d.get("note", ""))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "CostCatalog":
        return cls.from_dict(json.loads(Path(path).read_text()))

    @classmethod
    def default(cls) -> "CostCatalog":
        text = resources.files("pavrl").joinpath("data/cost_catalog.json").read_text("utf-8")
        return cls.from_dict(json.loads(text)).check_complete()


def env_cost(a, cat: CostCatalog, zeta: float = DEFAULT_ZETA) -> float:
    """Monetized emissions of one application of ``a``."""
    return cat.co2e(a) * zeta


def discounted_step_cost(a, cat: CostCatalog, zeta: float, t: int) -> float:
    if t < 0:
        raise ValidationError("t must be >= 0")
    return (cat.economic_cost(a) + env_cost(a, cat, zeta)) / DISCOUNT_BASE ** t


def step_area(baseline, actual, indicator_range) -> float:
    """Normalized trapezoid between the do-nothing and actual curves over one year.

    ``baseline`` and ``actual`` are ``(value_t, value_t+1)`` pairs. Positive when
    the actual curve lies below (better than) the do-nothing curve.
    """
    lo, hi = indicator_range
    width = hi - lo
    if not width > 0:
        raise ConfigurationError(f"degenerate indicator range {indicator_range!r}")
    g0 = baseline[0] - actual[0]
    g1 = baseline[1] - actual[1]
    return 0.5 * (g0 + g1) / width


@dataclass
class RewardLedger:
    """Running benefit areas and discounted cost of one trajectory."""

    cat: CostCatalog
    zeta: float = DEFAULT_ZETA
    weights: dict = field(default_factory=lambda: dict(DEFAULT_WEIGHTS))
    total_area: dict = field(default_factory=lambda: {i: 0.0 for i in INDICATORS})
    total_cost: float = 0.0
    effcost_history: list = field(default_factory=list)
    rows: list = field(default_factory=list)

    def __post_init__(self):
        if set(self.weights) != set(INDICATORS):
            raise ConfigurationError(f"weights must be given for {INDICATORS}")
        if abs(sum(self.weights.values()) - 1.0) > 1e-12:
            raise ConfigurationError("indicator weights must sum to 1")
        if self.zeta < 0:
            raise ConfigurationError("carbon price must be >= 0")

    @property
    def next_step(self) -> int:
        return len(self.effcost_history)

    def copy(self) -> "RewardLedger":
        return RewardLedger(self.cat, self.zeta, dict(self.weights), dict(self.total_area), self.total_cost,
                            list(self.effcost_history), list(self.rows))


def update_ledger(ledger: RewardLedger, areas: dict, a, t: int) -> RewardLedger:
    """Advance ``ledger`` by one step in place and return it."""
    if t != ledger.next_step:
        raise SequencingError(f"ledger expects step {ledger.next_step}, got {t}")
    action = get_action(a)
    prev = final_effcost(ledger)
    cost = discounted_step_cost(action, ledger.cat, ledger.zeta, t)
    for i in INDICATORS:
        ledger.total_area[i] += areas[i]
    ledger.total_cost += cost
    eff = final_effcost(ledger)
    ledger.effcost_history.append(eff)
    ledger.rows.append({
        "step": t, "action": action.id,
        "area_IRI": areas["IRI"], "area_RD": areas["RD"],
        "discounted_cost": cost, "effcost": eff, "reward": eff - prev,
    })
    return ledger


def eff_cost(ledger: RewardLedger, indicator: str) -> float:
    if ledger.total_cost != 0:
        return ledger.total_area[indicator] / ledger.total_cost
    return 0.0


def final_effcost(ledger: RewardLedger) -> float:
    return sum(ledger.weights[i] * eff_cost(ledger, i) for i in INDICATORS)


def combine_effcost(eff_iri: float, eff_rd: float, weights=DEFAULT_WEIGHTS) -> float:
    return weights["IRI"] * eff_iri + weights["RD"] * eff_rd


def reward(ledger_prev, ledger_next) -> float:
    """Change in combined cost-effectiveness between two consecutive ledgers.

    Either argument may be a :class:`RewardLedger` or an already computed
    combined cost-effectiveness value.
    """
    prev = ledger_prev if isinstance(ledger_prev, (int, float)) else final_effcost(ledger_prev)
    nxt = ledger_next if isinstance(ledger_next, (int, float)) else final_effcost(ledger_next)
    return nxt - prev


LEDGER_COLUMNS = ("step", "action", "area_IRI", "area_RD", "discounted_cost", "effcost", "reward")


def ledger_to_csv(ledger: RewardLedger) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=LEDGER_COLUMNS, lineterminator="\n")
    w.writeheader()
    for row in ledger.rows:
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    return buf.getvalue()


# ---------------------------------------------------------------------------
# placeholder catalog

# USD per m2: fixed part and part per mm of placed asphalt
_UNIT_COST = {
    ActionKind.AsphaltConcreteOverlay: (2.0, 0.22),
    ActionKind.HotMixRecycledACOverlay: (1.7, 0.187),
    ActionKind.MillOffACOverlayAC: (6.0, 0.22),
    ActionKind.MillExistingOverlayRecycledAC: (5.1, 0.187),
    ActionKind.AggregateSealCoat: (3.5, 0.0),
    ActionKind.FogSealCoat: (1.0, 0.0),
    ActionKind.CrackSealingPatching: (1.8, 0.0),
}
_AC30_PREMIUM = 1.05
_RECYCLED = (ActionKind.HotMixRecycledACOverlay, ActionKind.MillExistingOverlayRecycledAC)

# kg pollutant per kg of hot mix placed
_MIX_PRODUCTION = {"SO2": 2.0e-4, "CO2": 4.5e-2, "NOx": 2.0e-4, "PM2.5": 3.0e-5, "CO": 1.0e-4, "CH4": 5.0e-5, "N2O": 1.0e-6}
_MIX_TRANSPORT = {"SO2": 1.0e-5, "CO2": 6.0e-3, "NOx": 5.0e-5, "PM2.5": 3.0e-6, "CO": 2.0e-5, "CH4": 5.0e-7, "N2O": 2.0e-7}
# kg pollutant per m2 of paving / milling equipment work
_PAVING = {"SO2": 3.0e-4, "CO2": 0.4, "NOx": 4.0e-3, "PM2.5": 3.0e-4, "CO": 2.0e-3, "CH4": 2.0e-5, "N2O": 1.0e-5}
_MILLING_PER_MM = {k: v * 0.02 for k, v in _PAVING.items()}
# kg CO2 per m2 for surface treatments; other pollutants follow the mix-production profile
_SURFACE_CO2 = {ActionKind.AggregateSealCoat: 0.6, ActionKind.FogSealCoat: 0.2, ActionKind.CrackSealingPatching: 0.3}
_MIX_DENSITY = 2.4  # kg per m2 per mm


def _scale(profile, factor):
    return {p: v * factor for p, v in profile.items()}


def build_placeholder_catalog(segment_area_m2: float = 500 * 6 * 3.66) -> CostCatalog:
    """Order-of-magnitude cost and emission values for one segment.

    The numbers are illustrative defaults to make the model runnable; they are
    not calibrated unit prices or inventories.
    """
    entries = {0: CostEntry(0.0, EmissionsInventory())}
    for a in build_action_catalog()[1:]:
        fixed, per_mm = _UNIT_COST[a.kind]
        thick = a.thickness or 0.0
        unit = fixed + per_mm * thick
        if a.material == "AC-30":
            unit *= _AC30_PREMIUM
        if a.kind in OVERLAY_KINDS:
            mix = _MIX_DENSITY * thick * segment_area_m2
            prod = _scale(_MIX_PRODUCTION, mix * (0.75 if a.kind in _RECYCLED else 1.0))
            trans = _scale(_MIX_TRANSPORT, mix)
            cons = _scale(_PAVING, segment_area_m2)
            if a.kind in MILL_KINDS:
                cons = {p: v + _MILLING_PER_MM[p] * thick * segment_area_m2 for p, v in cons.items()}
        else:
            co2 = _SURFACE_CO2[a.kind] * segment_area_m2
            prod = _scale(_MIX_PRODUCTION, co2 / _MIX_PRODUCTION["CO2"])
            trans = _scale(_MIX_TRANSPORT, 0.1 * co2 / _MIX_TRANSPORT["CO2"])
            cons = _scale(_PAVING, 0.3 * segment_area_m2)
        inv = EmissionsInventory({"production": prod, "transportation": trans, "construction": cons})
        entries[a.id] = CostEntry(round(unit * segment_area_m2, 2), inv)
    return CostCatalog(entries, note="PLACEHOLDER values, not authoritative unit costs or inventories")

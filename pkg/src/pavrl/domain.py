"""Segment states, the maintenance action catalog and condition bands."""
from __future__ import annotations

import csv
import enum
import io
from dataclasses import dataclass, field, replace
from functools import lru_cache
from importlib import resources

import numpy as np

from .exceptions import ConfigurationError, ValidationError
from .scaling import NormalizationParams, minmax_apply, minmax_invert

LAYERS = ("surface", "binder", "base", "subbase")


# ---------------------------------------------------------------------------
# categorical codes


def parse_code_file(text: str) -> dict[str, tuple[str, ...]]:
    sections: dict[str, list[str]] = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip()
            if current in sections:
                raise ConfigurationError(f"line {lineno}: duplicate section [{current}]")
            sections[current] = []
            continue
        if current is None:
            raise ConfigurationError(f"line {lineno}: code {line!r} outside any [section]")
        if line in sections[current]:
            raise ConfigurationError(f"line {lineno}: duplicate code {line!r} in [{current}]")
        sections[current].append(line)
    return {k: tuple(v) for k, v in sections.items()}


@lru_cache(maxsize=None)
def default_codes() -> dict[str, tuple[str, ...]]:
    """The closed code enumeration shipped in ``data/categorical_codes.txt``."""
    text = resources.files("pavrl").joinpath("data/categorical_codes.txt").read_text("utf-8")
    return parse_code_file(text)


def code_index(field_name: str, code: str, codes=None) -> int:
    codes = default_codes() if codes is None else codes
    try:
        vocab = codes[field_name]
    except KeyError:
        raise ConfigurationError(f"no code list for field {field_name!r}") from None
    try:
        return vocab.index(code)
    except ValueError:
        raise ValidationError(f"unknown {field_name} code {code!r}; expected one of {list(vocab)}") from None


# ---------------------------------------------------------------------------
# segment state


@dataclass(frozen=True)
class Layer:
    type: str = "NONE"
    thickness_mm: float = 0.0
    material: str = "NONE"


@dataclass(frozen=True)
class StructureProfile:
    surface: Layer
    binder: Layer
    base: Layer
    subbase: Layer

    def layers(self):
        return (self.surface, self.binder, self.base, self.subbase)

    def values(self, codes=None) -> list[float]:
        out = []
        for layer in self.layers():
            out += [
                float(code_index("layer_type", layer.type, codes)),
                float(layer.thickness_mm),
                float(code_index("layer_material", layer.material, codes)),
            ]
        return out


@dataclass(frozen=True)
class TrafficProfile:
    truck_ratio: float
    annual_esal: float
    annual_aadt: float


@dataclass(frozen=True)
class ClimateProfile:
    annual_precipitation: float
    freeze_thaw_cycles: float
    freeze_flag: str = "freeze"
    moisture_flag: str = "wet"


@dataclass(frozen=True)
class SegmentState:
    """One road segment: structure, traffic, climate and current condition.

    ``structure`` is the as-maintained structure (overlays change the surface);
    ``original_structure`` keeps the as-built layers and defaults to ``structure``.
    ``year`` is the calendar year the state refers to.
    """

    structure: StructureProfile
    traffic: TrafficProfile
    climate: ClimateProfile
    iri: float
    rd: float
    age_years: float = 0.0
    year: float = 2021.0
    segment_id: str = ""
    original_structure: StructureProfile | None = field(default=None)

    def __post_init__(self):
        if self.original_structure is None:
            object.__setattr__(self, "original_structure", self.structure)

    def with_(self, **changes) -> "SegmentState":
        return replace(self, **changes)


def validate_state(s: SegmentState, codes=None) -> SegmentState:
    errors = []
    if not s.iri > 0:
        errors.append(f"iri must be > 0 (got {s.iri})")
    if not s.rd >= 0:
        errors.append(f"rd must be >= 0 (got {s.rd})")
    if not 0.0 <= s.traffic.truck_ratio <= 1.0:
        errors.append(f"truck_ratio must lie in [0, 1] (got {s.traffic.truck_ratio})")
    if s.traffic.annual_aadt < 0:
        errors.append("annual_aadt must be >= 0")
    if s.traffic.annual_esal < 0:
        errors.append("annual_esal must be >= 0")
    if s.age_years < 0:
        errors.append("age_years must be >= 0")
    for name, layer in zip(LAYERS, s.structure.layers()):
        if layer.thickness_mm < 0:
            errors.append(f"{name} thickness must be >= 0")
    if errors:
        raise ValidationError("; ".join(errors))
    # categorical membership
    s.structure.values(codes)
    s.original_structure.values(codes)
    code_index("freeze_flag", s.climate.freeze_flag, codes)
    code_index("moisture_flag", s.climate.moisture_flag, codes)
    return s


# ---------------------------------------------------------------------------
# action catalog


class ActionKind(str, enum.Enum):
    DoNothing = "DoNothing"
    AsphaltConcreteOverlay = "AsphaltConcreteOverlay"
    HotMixRecycledACOverlay = "HotMixRecycledACOverlay"
    MillOffACOverlayAC = "MillOffACOverlayAC"
    MillExistingOverlayRecycledAC = "MillExistingOverlayRecycledAC"
    AggregateSealCoat = "AggregateSealCoat"
    FogSealCoat = "FogSealCoat"
    CrackSealingPatching = "CrackSealingPatching"


OVERLAY_KINDS = frozenset({
    ActionKind.AsphaltConcreteOverlay,
    ActionKind.HotMixRecycledACOverlay,
    ActionKind.MillOffACOverlayAC,
    ActionKind.MillExistingOverlayRecycledAC,
})
MILL_KINDS = frozenset({ActionKind.MillOffACOverlayAC, ActionKind.MillExistingOverlayRecycledAC})
SEAL_COAT_KINDS = frozenset({ActionKind.AggregateSealCoat, ActionKind.FogSealCoat})

# (kind, thicknesses in mm, materials); catalog order follows this table after DoNothing
_TABLE = (
    (ActionKind.AsphaltConcreteOverlay, (25.4, 50.8, 76.2, 101.6), ("AC-20", "AC-30")),
    (ActionKind.HotMixRecycledACOverlay, (38.1, 50.8, 76.2), ("AC-20", "AC-30")),
    (ActionKind.MillOffACOverlayAC, (38.1, 50.8, 76.2, 101.6), ("AC-20", "AC-30")),
    (ActionKind.MillExistingOverlayRecycledAC, (50.8, 76.2, 101.6), ("AC-20", "AC-30")),
    (ActionKind.AggregateSealCoat, (None,), ("AC-20",)),
    (ActionKind.FogSealCoat, (None,), ("HFRS-2P",)),
    (ActionKind.CrackSealingPatching, (None,), ("AC-20",)),
)

# kinds listed in the order used by reports and by the 3-slot maintenance encoding
KIND_ORDER = (
    ActionKind.DoNothing,
    ActionKind.AsphaltConcreteOverlay,
    ActionKind.HotMixRecycledACOverlay,
    ActionKind.MillOffACOverlayAC,
    ActionKind.MillExistingOverlayRecycledAC,
    ActionKind.AggregateSealCoat,
    ActionKind.FogSealCoat,
    ActionKind.CrackSealingPatching,
)


@dataclass(frozen=True)
class MaintenanceAction:
    id: int
    kind: ActionKind
    thickness: float | None = None
    material: str | None = None

    @property
    def is_do_nothing(self) -> bool:
        return self.kind is ActionKind.DoNothing

    @property
    def label(self) -> str:
        parts = [self.kind.value]
        if self.thickness is not None:
            parts.append(f"{self.thickness:g}mm")
        if self.material is not None:
            parts.append(self.material)
        return " ".join(parts)


@lru_cache(maxsize=None)
def _catalog() -> tuple[MaintenanceAction, ...]:
    actions = [MaintenanceAction(0, ActionKind.DoNothing)]
    for kind, thicknesses, materials in _TABLE:
        for t in thicknesses:
            for m in materials:
                actions.append(MaintenanceAction(len(actions), kind, t, m))
    return tuple(actions)


def build_action_catalog() -> list[MaintenanceAction]:
    """All 32 actions, ``id`` equal to list position, id 0 being DoNothing."""
    return list(_catalog())


N_ACTIONS = len(_catalog())


def get_action(action_id) -> MaintenanceAction:
    if isinstance(action_id, MaintenanceAction):
        action_id = action_id.id
    if isinstance(action_id, (bool, np.bool_)) or not isinstance(action_id, (int, np.integer)):
        raise ValidationError(f"action id must be an integer, got {action_id!r}")
    if not 0 <= action_id < N_ACTIONS:
        raise ValidationError(f"action id {action_id} outside catalog range 0..{N_ACTIONS - 1}")
    return _catalog()[int(action_id)]


def catalog_to_csv(catalog=None) -> str:
    catalog = build_action_catalog() if catalog is None else catalog
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["id", "kind", "thickness_mm", "material"])
    for a in catalog:
        w.writerow([a.id, a.kind.value, "" if a.thickness is None else a.thickness, a.material or ""])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# agent-state encoding

AGENT_FEATURES = tuple(
    [f"{layer}_{attr}" for layer in LAYERS for attr in ("type", "thickness", "material")]
    + ["truck_ratio", "annual_esal", "annual_aadt"]
    + ["annual_precipitation", "freeze_thaw_cycles", "freeze_flag", "moisture_flag"]
    + ["iri", "rd"]
)
assert len(AGENT_FEATURES) == 21


def agent_feature_vector(s: SegmentState, codes=None) -> np.ndarray:
    """Raw (unscaled) 21-vector in ``AGENT_FEATURES`` order."""
    t, c = s.traffic, s.climate
    values = s.structure.values(codes) + [
        t.truck_ratio, t.annual_esal, t.annual_aadt,
        c.annual_precipitation, c.freeze_thaw_cycles,
        code_index("freeze_flag", c.freeze_flag, codes),
        code_index("moisture_flag", c.moisture_flag, codes),
        s.iri, s.rd,
    ]
    return np.array(values, dtype=np.float64)


def fit_agent_normalization(states, codes=None) -> NormalizationParams:
    from .scaling import minmax_fit

    X = np.stack([agent_feature_vector(s, codes) for s in states])
    return minmax_fit(X, AGENT_FEATURES)


def _check_norm(norm):
    if norm is None or not isinstance(norm, NormalizationParams):
        raise ConfigurationError("agent-state normalization parameters are not fitted")
    if norm.names != AGENT_FEATURES:
        raise ConfigurationError("normalization parameters were not fitted on the agent feature layout")


def encode_agent_state(s: SegmentState, norm: NormalizationParams, codes=None) -> np.ndarray:
    _check_norm(norm)
    return minmax_apply(agent_feature_vector(s, codes), norm)


def decode_agent_state(x, norm: NormalizationParams, template: SegmentState, codes=None) -> SegmentState:
    """Invert :func:`encode_agent_state`; non-encoded fields come from ``template``."""
    _check_norm(norm)
    codes = default_codes() if codes is None else codes
    raw = minmax_invert(np.asarray(x, dtype=np.float64), norm)

    def cat(field_name, v):
        return codes[field_name][int(round(v))]

    layers = []
    for i in range(4):
        ty, th, mat = raw[3 * i: 3 * i + 3]
        layers.append(Layer(cat("layer_type", ty), float(th), cat("layer_material", mat)))
    return template.with_(
        structure=StructureProfile(*layers),
        traffic=TrafficProfile(float(raw[12]), float(raw[13]), float(raw[14])),
        climate=ClimateProfile(float(raw[15]), float(raw[16]), cat("freeze_flag", raw[17]),
                               cat("moisture_flag", raw[18])),
        iri=float(raw[19]),
        rd=float(raw[20]),
    )


# ---------------------------------------------------------------------------
# condition bands


@dataclass(frozen=True)
class ConditionBand:
    label: str
    iri_upper: float
    rd_upper: float


DEFAULT_BANDS = (
    ConditionBand("excellent", 1.5, 6.0),
    ConditionBand("good", 2.7, 12.0),
    ConditionBand("fair", 3.5, 20.0),
    ConditionBand("poor", float("inf"), float("inf")),
)


def validate_bands(bands) -> None:
    if not bands:
        raise ConfigurationError("at least one condition band is required")
    for prev, nxt in zip(bands, bands[1:]):
        if not (nxt.iri_upper > prev.iri_upper and nxt.rd_upper > prev.rd_upper):
            raise ConfigurationError("condition band thresholds must be strictly increasing")
    if bands[-1].iri_upper != float("inf") or bands[-1].rd_upper != float("inf"):
        raise ConfigurationError("the last band must be open-ended so bands cover [0, inf)")


def _band_index(value, uppers) -> int:
    # upper bounds exclusive: a value equal to a bound falls in the next band
    for i, upper in enumerate(uppers):
        if value < upper:
            return i
    return len(uppers) - 1


def classify_condition(s: SegmentState, bands=DEFAULT_BANDS) -> str:
    """Label of the worst band reached by either IRI or RD."""
    validate_bands(bands)
    i = _band_index(s.iri, [b.iri_upper for b in bands])
    r = _band_index(s.rd, [b.rd_upper for b in bands])
    return bands[max(i, r)].label


def find_action(kind, thickness=None, material=None) -> MaintenanceAction:
    """Catalog entry matching ``(kind, thickness, material)``; blanks match a unique entry."""
    try:
        kind = ActionKind(kind)
    except ValueError:
        raise ValidationError(f"unknown action kind {kind!r}") from None
    hits = [
        a for a in _catalog()
        if a.kind is kind
        and (thickness in (None, "") or (a.thickness is not None and abs(a.thickness - float(thickness)) < 1e-6))
        and (material in (None, "") or a.material == material)
    ]
    if len(hits) != 1:
        what = "no" if not hits else "ambiguous"
        raise ValidationError(f"{what} catalog action for kind={kind.value} thickness={thickness} material={material}")
    return hits[0]


def apply_structure_change(structure: StructureProfile, action: MaintenanceAction) -> StructureProfile:
    """Surface layer after an overlay: mill-and-overlay replaces the milled depth, plain overlays add to it."""
    if action.kind not in OVERLAY_KINDS:
        return structure
    surf = structure.surface
    if action.kind in MILL_KINDS:
        thickness = max(surf.thickness_mm, action.thickness)
    else:
        thickness = surf.thickness_mm + action.thickness
    material = "RAP-AC" if action.kind in (ActionKind.HotMixRecycledACOverlay,
                                           ActionKind.MillExistingOverlayRecycledAC) else action.material
    return replace(structure, surface=Layer(surf.type if surf.type != "NONE" else "AC", thickness, material))

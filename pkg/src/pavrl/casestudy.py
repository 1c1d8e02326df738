"""Hypothetical six-lane highway fleet used by the experiments."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .domain import ClimateProfile, Layer, SegmentState, StructureProfile, TrafficProfile, validate_state
from .exceptions import ConfigurationError


@dataclass
class CaseStudyConfig:
    segment_count: int = 46
    segment_length_m: float = 500.0
    lane_width_m: float = 3.66
    lanes: int = 6
    freeze_flag: str = "freeze"
    moisture_flag: str = "wet"
    horizon_years: int = 20
    start_year: int = 2021
    iri_range: tuple = (0.9, 1.5)
    rd_range: tuple = (2.0, 5.0)
    age_range: tuple = (2.0, 6.0)
    aadt_range: tuple = (30000.0, 60000.0)
    truck_ratio_range: tuple = (0.08, 0.20)
    precipitation_range: tuple = (900.0, 1300.0)
    freeze_thaw_range: tuple = (30.0, 80.0)
    surface_thickness_range: tuple = (40.0, 75.0)
    binder_thickness_range: tuple = (50.0, 100.0)
    base_thickness_range: tuple = (150.0, 300.0)
    subbase_thickness_range: tuple = (150.0, 300.0)
    # design-lane ESAL per truck and direction split
    esal_per_truck: tuple = (0.9, 1.3)
    directional_split: float = 0.5

    def __post_init__(self):
        if self.segment_count < 1:
            raise ConfigurationError("segment_count must be >= 1")
        if not (self.segment_length_m > 0 and self.lane_width_m > 0 and self.lanes > 0):
            raise ConfigurationError("segment geometry must be positive")
        if self.horizon_years < 1:
            raise ConfigurationError("horizon_years must be >= 1")
        for name, value in asdict(self).items():
            if name.endswith("_range") or name == "esal_per_truck":
                lo, hi = value
                if hi < lo:
                    raise ConfigurationError(f"{name}: hi < lo")
                setattr(self, name, (float(lo), float(hi)))

    @property
    def total_length_km(self) -> float:
        return self.segment_count * self.segment_length_m / 1000.0

    @property
    def segment_area_m2(self) -> float:
        return self.segment_length_m * self.lane_width_m * self.lanes

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "CaseStudyConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigurationError(f"unknown case-study keys: {sorted(unknown)}")
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})

    @classmethod
    def load(cls, path) -> "CaseStudyConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


def generate_case_study(cfg: CaseStudyConfig | None = None, seed: int = 0) -> list[SegmentState]:
    """Deterministic fleet of ``cfg.segment_count`` segments in good condition."""
    cfg = cfg or CaseStudyConfig()
    rng = np.random.default_rng(seed)

    def u(r):
        return float(rng.uniform(*r))

    fleet = []
    for i in range(cfg.segment_count):
        structure = StructureProfile(
            Layer("AC", round(u(cfg.surface_thickness_range), 1), str(rng.choice(["AC-20", "AC-30"]))),
            Layer("AC", round(u(cfg.binder_thickness_range), 1), "AC-20"),
            Layer("GB", round(u(cfg.base_thickness_range), 1), "CRUSHED-STONE"),
            Layer("GS", round(u(cfg.subbase_thickness_range), 1), "GRAVEL"),
        )
        aadt = round(u(cfg.aadt_range))
        trucks = round(u(cfg.truck_ratio_range), 3)
        esal = round(aadt * trucks * 365.0 * cfg.directional_split * u(cfg.esal_per_truck))
        s = SegmentState(
            structure=structure,
            traffic=TrafficProfile(trucks, float(esal), float(aadt)),
            climate=ClimateProfile(round(u(cfg.precipitation_range), 1), round(u(cfg.freeze_thaw_range)),
                                   cfg.freeze_flag, cfg.moisture_flag),
            iri=round(u(cfg.iri_range), 3),
            rd=round(u(cfg.rd_range), 2),
            age_years=float(round(u(cfg.age_range))),
            year=float(cfg.start_year),
            segment_id=f"S{i + 1:02d}",
        )
        fleet.append(validate_state(s))
    return fleet

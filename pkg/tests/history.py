"""Synthetic LTPP-shaped condition histories for the data-pipeline tests."""
import csv
import datetime as dt
import io

import numpy as np

from pavrl.dataprep import ACTION_COLUMNS, MANDATORY_COLUMNS

BASE_ROW = {
    "surface_type": "AC", "surface_thickness": "50.0", "surface_material": "AC-20",
    "binder_type": "AC", "binder_thickness": "75.0", "binder_material": "AC-20",
    "base_type": "GB", "base_thickness": "200.0", "base_material": "CRUSHED-STONE",
    "subbase_type": "GS", "subbase_thickness": "250.0", "subbase_material": "GRAVEL",
    "truck_ratio": "0.12", "annual_esal": "900000", "annual_aadt": "40000",
    "annual_precipitation": "1100", "freeze_thaw_cycles": "55",
    "freeze_flag": "freeze", "moisture_flag": "wet",
}


def write_table(rows, with_actions=True) -> str:
    cols = list(MANDATORY_COLUMNS) + (list(ACTION_COLUMNS) if with_actions else [])
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({c: r.get(c, "") for c in cols})
    return buf.getvalue()


def row(segment, date, iri, rd, **extra):
    out = dict(BASE_ROW)
    out.update(segment_id=segment, date=str(date), iri="" if iri is None else repr(iri),
               rd="" if rd is None else repr(rd))
    out.update(extra)
    return out


def synthetic_history(n_segments=6, n_obs=8, seed=0, noise=0.03, with_action=True):
    """Noisy increasing histories, one mill-and-overlay per segment halfway through."""
    rng = np.random.default_rng(seed)
    rows = []
    for k in range(n_segments):
        sid = f"T{k:02d}"
        iri, rd = 1.0 + 0.1 * k, 3.0 + 0.2 * k
        start = dt.date(2000 + k % 3, 6, 1)
        for i in range(n_obs):
            date = start + dt.timedelta(days=int(365.25 * i))
            if with_action and i == n_obs // 2:
                rows.append(row(sid, date - dt.timedelta(days=30), None, None, action_kind="MillOffACOverlayAC",
                                action_thickness_mm="50.8", action_material="AC-20"))
                iri, rd = 0.9, 1.5
            rows.append(row(sid, date, round(iri * (1 + noise * rng.standard_normal()), 4),
                            round(rd * (1 + noise * rng.standard_normal()), 3)))
            iri += 0.08 + 0.02 * rng.random()
            rd += 0.5 + 0.2 * rng.random()
    return write_table(rows)

"""Descriptive aggregates and the neighborhood risk-map export.

All exports are plain rows or GeoJSON dictionaries; file writing lives with
the CLI so these stay pure and byte-deterministic given (data, model, seed).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .features import log1p_lead
from .ingest import LeadTest, ParcelRecord, ServiceLineRecord
from .pipeline import StackedModel
from .util import rng_for


@dataclass(frozen=True)
class GroupSummary:
    key: str
    n: int
    mean_log_lead: float
    ci_low: float
    ci_high: float


def _bootstrap_mean_ci(values: np.ndarray, n_bootstrap: int, rng: np.random.Generator) -> tuple[float, float]:
    if values.size == 1:
        return float(values[0]), float(values[0])
    idx = rng.integers(0, values.size, size=(n_bootstrap, values.size))
    means = values[idx].mean(axis=1)
    lo, hi = np.percentile(means, [2.5, 97.5])
    point = float(values.mean())
    return min(float(lo), point), max(float(hi), point)


def _summaries(groups: dict[str, list[float]], n_bootstrap: int, seed: int) -> list[GroupSummary]:
    out = []
    for i, key in enumerate(sorted(groups)):
        values = np.asarray(groups[key], dtype=np.float64)
        if values.size == 0:
            continue
        rng = rng_for(seed, i)
        lo, hi = _bootstrap_mean_ci(values, n_bootstrap, rng)
        out.append(GroupSummary(key=key, n=int(values.size), mean_log_lead=float(values.mean()), ci_low=lo, ci_high=hi))
    return out


def mean_log_lead_by_sl_type(
    matched_tests: Sequence[LeadTest],
    sl_records: Sequence[ServiceLineRecord],
    n_bootstrap: int = 200,
    seed: int = 0,
) -> list[GroupSummary]:
    """Mean log(1+lead) per raw service-line record label, bootstrap 95% CI."""
    label_by_pid = {r.pid: r.raw_label for r in sl_records}
    groups: dict[str, list[float]] = {}
    for test in matched_tests:
        label = label_by_pid.get(test.pid) or "Unknown"
        groups.setdefault(label, []).append(log1p_lead(test.lead_ppb))
    return _summaries(groups, n_bootstrap, seed)


def mean_log_lead_by_decade(
    matched_tests: Sequence[LeadTest],
    parcels: Sequence[ParcelRecord],
    n_bootstrap: int = 200,
    seed: int = 0,
    decade_range: tuple[int, int] = (1920, 1979),
) -> list[GroupSummary]:
    """Mean log(1+lead) per construction decade; out-of-range years pool in Other."""
    year_by_pid = {p.pid: p.year_built for p in parcels}
    lo, hi = decade_range
    groups: dict[str, list[float]] = {}
    for test in matched_tests:
        year = year_by_pid.get(test.pid)
        if year is None:
            key = "Other"
        else:
            decade = int(year // 10) * 10
            key = str(decade) if lo <= year <= hi else "Other"
        groups.setdefault(key, []).append(log1p_lead(test.lead_ppb))
    return _summaries(groups, n_bootstrap, seed)


def sl_type_year_points(parcels: Sequence[ParcelRecord]) -> list[tuple[int, str]]:
    """(year_built, service-line label) scatter points; needs both values."""
    points = []
    for p in parcels:
        if p.year_built is not None and p.sl_type:
            points.append((int(p.year_built), p.sl_type))
    return points


@dataclass(frozen=True)
class RiskMap:
    entries: list[tuple[str, float | None, float | None, float]]  # pid, lat, lon, probability
    threshold: float
    missing_coordinates: int

    def above_threshold(self) -> list[tuple[str, float, float, float]]:
        return [
            (pid, lat, lon, p)
            for pid, lat, lon, p in self.entries
            if p > self.threshold and lat is not None and lon is not None
        ]


def risk_map(model: StackedModel, parcels: Sequence[ParcelRecord], threshold: float = 0.1) -> RiskMap:
    """Predict every parcel, tested or not, and keep the full table.

    Parcels without coordinates stay in the table but are counted as
    unmappable and excluded from the GeoJSON view.
    """
    from .features import parcel_raw_row

    raw = np.empty((len(parcels), len(model.schema.features)), dtype=object)
    for i, p in enumerate(parcels):
        raw[i, :] = parcel_raw_row(p)
    probs = model.predict_proba(raw)
    entries = []
    missing = 0
    for p, prob in zip(parcels, probs):
        if p.latitude is None or p.longitude is None:
            missing += 1
        entries.append((p.pid, p.latitude, p.longitude, float(prob)))
    return RiskMap(entries=entries, threshold=threshold, missing_coordinates=missing)


def risk_geojson(rmap: RiskMap) -> dict:
    """RFC 7946 FeatureCollection of parcels above the display threshold."""
    features = [
        {
            "type": "Feature",
            "geometry": {"type": "Point", "coordinates": [lon, lat]},
            "properties": {"pid": pid, "probability": p},
        }
        for pid, lat, lon, p in rmap.above_threshold()
    ]
    return {"type": "FeatureCollection", "features": features}


def test_heatmap_rows(matched_tests: Sequence[LeadTest], parcels: Sequence[ParcelRecord]) -> list[tuple[float, float, float]]:
    """(latitude, longitude, lead_ppb) for every matched test with coordinates."""
    by_pid = {p.pid: p for p in parcels}
    rows = []
    for test in matched_tests:
        parcel = by_pid.get(test.pid) if test.pid else None
        if parcel is None or parcel.latitude is None or parcel.longitude is None:
            continue
        rows.append((parcel.latitude, parcel.longitude, test.lead_ppb))
    return rows

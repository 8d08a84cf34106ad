"""Feature schema, row encoding, and dataset assembly.

Two encodings are supported.  Tree learners consume ordinal codes (one column
per feature, categorical cells replaced by vocabulary index, missing numerics
kept as NaN and resolved by each tree's per-node missing direction).  Linear
and distance learners consume a one-hot expansion with standardized,
median-imputed numerics.  All vocabulary and standardization statistics come
from training rows only and are carried by the schema so a model can ship with
its exact encoder.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .errors import DataError
from .ingest import LeadTest, ParcelRecord
from .util import digest

UNKNOWN = "Unknown"
ACTION_LEVEL_PPB = 15.0

NUMERIC = "numeric"
CATEGORICAL = "categorical"

# The 35 modeling attributes, in canonical order.  pid is consumed as a
# numeric after stripping non-digits (parcel ids are geographically assigned);
# centract holds population counts and is numeric as well.
PARCEL_FEATURES: tuple[tuple[str, str], ...] = (
    ("pid", NUMERIC),
    ("zip", CATEGORICAL),
    ("owner_type", CATEGORICAL),
    ("homestead", CATEGORICAL),
    ("homestead_percent", NUMERIC),
    ("home_sev", NUMERIC),
    ("land_value", NUMERIC),
    ("land_improvements_value", NUMERIC),
    ("residential_building_value", NUMERIC),
    ("commercial_building_value", NUMERIC),
    ("building_storeys", CATEGORICAL),
    ("parcel_acres", NUMERIC),
    ("use_type", CATEGORICAL),
    ("prop_class", CATEGORICAL),
    ("old_prop_class", CATEGORICAL),
    ("year_built", NUMERIC),
    ("usps_vacancy", CATEGORICAL),
    ("zoning", CATEGORICAL),
    ("future_landuse", CATEGORICAL),
    ("draft_zone", CATEGORICAL),
    ("housing_condition_2012", CATEGORICAL),
    ("housing_condition_2014", CATEGORICAL),
    ("commercial_condition_2013", CATEGORICAL),
    ("rental", CATEGORICAL),
    ("residential_building_style", CATEGORICAL),
    ("latitude", NUMERIC),
    ("longitude", NUMERIC),
    ("hydrant_type", CATEGORICAL),
    ("ward", CATEGORICAL),
    ("precinct", CATEGORICAL),
    ("centract", NUMERIC),
    ("cenblock", CATEGORICAL),
    ("sl_type", CATEGORICAL),
    ("sl_type2", CATEGORICAL),
    ("sl_lead", CATEGORICAL),
)


def binarize_label(lead_ppb: float) -> int:
    """1 iff the reading strictly exceeds the 15 ppb action level."""
    if lead_ppb < 0:
        raise DataError(f"negative lead level: {lead_ppb}")
    return 1 if lead_ppb > ACTION_LEVEL_PPB else 0


def log1p_lead(lead_ppb: float) -> float:
    if lead_ppb < 0:
        raise DataError(f"negative lead level: {lead_ppb}")
    return float(np.log1p(lead_ppb))


@dataclass(frozen=True)
class Feature:
    name: str
    kind: str
    vocabulary: tuple[str, ...] | None = None  # categorical only; UNKNOWN is last
    mean: float | None = None
    sd: float | None = None
    median: float | None = None

    def vocab_index(self, value) -> int:
        try:
            return self.vocabulary.index(value)
        except ValueError:
            return len(self.vocabulary) - 1  # the reserved UNKNOWN slot


@dataclass(frozen=True)
class FeatureSchema:
    features: tuple[Feature, ...]

    def __post_init__(self):
        names = [f.name for f in self.features]
        if len(set(names)) != len(names):
            raise DataError("duplicate feature names in schema")

    @property
    def names(self) -> list[str]:
        return [f.name for f in self.features]

    def index_of(self, name: str) -> int:
        return self.names.index(name)

    def drop(self, name: str) -> "FeatureSchema":
        return FeatureSchema(tuple(f for f in self.features if f.name != name))

    def refit(self, raw: np.ndarray) -> "FeatureSchema":
        """Recompute vocabularies and numeric statistics from the given rows.

        Feature names and kinds are preserved; call this on training rows
        only so no validation information leaks into the encoder.
        """
        fitted = []
        for j, feat in enumerate(self.features):
            col = raw[:, j]
            if feat.kind == CATEGORICAL:
                seen = {str(v) for v in col if v is not None and str(v) != ""} - {UNKNOWN}
                vocab = tuple(sorted(seen)) + (UNKNOWN,)
                fitted.append(replace(feat, vocabulary=vocab, mean=None, sd=None, median=None))
            else:
                vals = np.array([v for v in col if v is not None and not _is_nan(v)], dtype=np.float64)
                if vals.size:
                    mean = float(vals.mean())
                    sd = float(vals.std())  # population sd
                    median = float(np.median(vals))
                else:
                    mean, sd, median = 0.0, 1.0, 0.0
                if sd == 0.0:
                    sd = 1.0
                fitted.append(replace(feat, vocabulary=None, mean=mean, sd=sd, median=median))
        return FeatureSchema(tuple(fitted))

    def encode(self, raw: np.ndarray, mode: str) -> np.ndarray:
        if mode == "ordinal":
            return _encode_ordinal(self, raw)
        if mode == "onehot":
            return _encode_onehot(self, raw)
        raise DataError(f"unknown encoding mode: {mode}")

    def onehot_layout(self) -> list[tuple[str, int, int]]:
        """(feature name, start column, stop column) in the one-hot matrix."""
        layout = []
        start = 0
        for f in self.features:
            width = 1 if f.kind == NUMERIC else len(f.vocabulary)
            layout.append((f.name, start, start + width))
            start += width
        return layout

    def to_doc(self) -> dict:
        return {
            "features": [
                {
                    "name": f.name,
                    "kind": f.kind,
                    "vocabulary": list(f.vocabulary) if f.vocabulary else None,
                    "mean": f.mean,
                    "sd": f.sd,
                    "median": f.median,
                }
                for f in self.features
            ]
        }

    def hash(self) -> str:
        return digest(self.to_doc())

    @staticmethod
    def from_doc(doc: dict) -> "FeatureSchema":
        feats = tuple(
            Feature(
                name=f["name"],
                kind=f["kind"],
                vocabulary=tuple(f["vocabulary"]) if f.get("vocabulary") else None,
                mean=f.get("mean"),
                sd=f.get("sd"),
                median=f.get("median"),
            )
            for f in doc["features"]
        )
        return FeatureSchema(feats)


def _is_nan(v) -> bool:
    return isinstance(v, float) and np.isnan(v)


def _encode_ordinal(schema: FeatureSchema, raw: np.ndarray) -> np.ndarray:
    n = raw.shape[0]
    out = np.empty((n, len(schema.features)), dtype=np.float64)
    for j, feat in enumerate(schema.features):
        col = raw[:, j]
        if feat.kind == NUMERIC:
            out[:, j] = [np.nan if (v is None or _is_nan(v)) else float(v) for v in col]
        else:
            if feat.vocabulary is None:
                raise DataError(f"feature {feat.name} has no fitted vocabulary")
            unk = len(feat.vocabulary) - 1
            index = {v: i for i, v in enumerate(feat.vocabulary)}
            out[:, j] = [unk if (v is None or str(v) == "") else index.get(str(v), unk) for v in col]
    return out


def _encode_onehot(schema: FeatureSchema, raw: np.ndarray) -> np.ndarray:
    n = raw.shape[0]
    width = sum(1 if f.kind == NUMERIC else len(f.vocabulary or ()) for f in schema.features)
    out = np.zeros((n, width), dtype=np.float64)
    start = 0
    for j, feat in enumerate(schema.features):
        col = raw[:, j]
        if feat.kind == NUMERIC:
            if feat.mean is None or feat.sd is None or feat.median is None:
                raise DataError(f"feature {feat.name} has no fitted statistics")
            vals = np.array(
                [feat.median if (v is None or _is_nan(v)) else float(v) for v in col],
                dtype=np.float64,
            )
            out[:, start] = (vals - feat.mean) / feat.sd
            start += 1
        else:
            if feat.vocabulary is None:
                raise DataError(f"feature {feat.name} has no fitted vocabulary")
            unk = len(feat.vocabulary) - 1
            index = {v: i for i, v in enumerate(feat.vocabulary)}
            slots = [unk if (v is None or str(v) == "") else index.get(str(v), unk) for v in col]
            out[np.arange(n), start + np.asarray(slots)] = 1.0
            start += len(feat.vocabulary)
    return out


def encode_row(sample: Sequence, schema: FeatureSchema, mode: str) -> np.ndarray:
    """Encode a single raw row under the fitted schema."""
    raw = np.empty((1, len(schema.features)), dtype=object)
    raw[0, :] = list(sample)
    return schema.encode(raw, mode)[0]


# --- building rows from parcel records ----------------------------------------

_DIGITS = re.compile(r"\D")


def _pid_numeric(pid: str) -> float:
    digits = _DIGITS.sub("", pid or "")
    return float(digits) if digits else np.nan


def parcel_raw_row(parcel: ParcelRecord) -> list:
    row = []
    for name, kind in PARCEL_FEATURES:
        value = getattr(parcel, name)
        if name == "pid":
            row.append(_pid_numeric(parcel.pid))
        elif kind == NUMERIC:
            row.append(None if value is None else float(value))
        else:
            row.append(None if value is None else str(value))
    return row


def build_schema(parcels: Sequence[ParcelRecord]) -> FeatureSchema:
    """Full 35-feature schema with vocabularies and statistics from the data."""
    if not parcels:
        raise DataError("cannot build a schema from zero parcels")
    base = FeatureSchema(tuple(Feature(name, kind) for name, kind in PARCEL_FEATURES))
    raw = np.empty((len(parcels), len(PARCEL_FEATURES)), dtype=object)
    for i, p in enumerate(parcels):
        raw[i, :] = parcel_raw_row(p)
    return base.refit(raw)


@dataclass(frozen=True)
class Dataset:
    """Raw feature rows with labels and parcel group keys."""

    raw: np.ndarray  # (n, n_features) object array of raw values
    labels: np.ndarray  # (n,) int8
    groups: np.ndarray  # (n,) object
    schema: FeatureSchema
    lead_ppb: np.ndarray | None = None

    def __post_init__(self):
        if not (self.raw.shape[0] == self.labels.shape[0] == self.groups.shape[0]):
            raise DataError("rows, labels and groups must be equal length")
        if self.raw.shape[1] != len(self.schema.features):
            raise DataError("row width does not match schema")

    @property
    def n_rows(self) -> int:
        return int(self.raw.shape[0])

    def take(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        lead = None if self.lead_ppb is None else self.lead_ppb[idx]
        return Dataset(self.raw[idx], self.labels[idx], self.groups[idx], self.schema, lead)

    def drop_feature(self, name: str) -> "Dataset":
        j = self.schema.index_of(name)
        keep = [c for c in range(self.raw.shape[1]) if c != j]
        return Dataset(self.raw[:, keep], self.labels, self.groups, self.schema.drop(name), self.lead_ppb)


def assemble_dataset(
    matched_tests: Sequence[LeadTest],
    parcels: Sequence[ParcelRecord],
    schema: FeatureSchema,
) -> tuple[Dataset, int]:
    """One row per matched test; returns (dataset, excluded-count).

    A parcel with k tests contributes k rows sharing one group key.  Tests
    without a matched pid are excluded and counted.
    """
    by_pid = {p.pid: p for p in parcels}
    rows, labels, groups, leads = [], [], [], []
    excluded = 0
    for test in matched_tests:
        parcel = by_pid.get(test.pid) if test.pid else None
        if parcel is None:
            excluded += 1
            continue
        rows.append(parcel_raw_row(parcel))
        labels.append(binarize_label(test.lead_ppb))
        groups.append(parcel.pid)
        leads.append(test.lead_ppb)
    raw = np.empty((len(rows), len(schema.features)), dtype=object)
    for i, row in enumerate(rows):
        raw[i, :] = row
    dataset = Dataset(
        raw=raw,
        labels=np.array(labels, dtype=np.int8),
        groups=np.array(groups, dtype=object),
        schema=schema,
        lead_ppb=np.array(leads, dtype=np.float64),
    )
    return dataset, excluded


def dataset_from_arrays(
    columns: dict[str, np.ndarray],
    kinds: dict[str, str],
    labels: np.ndarray,
    groups: np.ndarray,
    lead_ppb: np.ndarray | None = None,
) -> Dataset:
    """Build a dataset over arbitrary named columns (used by generators and tests)."""
    names = list(columns)
    base = FeatureSchema(tuple(Feature(n, kinds.get(n, NUMERIC)) for n in names))
    n = len(labels)
    raw = np.empty((n, len(names)), dtype=object)
    for j, name in enumerate(names):
        col = columns[name]
        for i in range(n):
            raw[i, j] = col[i]
    schema = base.refit(raw)
    return Dataset(raw, np.asarray(labels, dtype=np.int8), np.asarray(groups, dtype=object), schema, lead_ppb)

"""Parsing and joining of the four source datasets.

Inputs are comma-delimited UTF-8 CSV files with a header row (RFC 4180
quoting).  Column headers are matched case-insensitively against the known
column names; extra columns are ignored.  Every parser returns the parsed
records together with a :class:`ParseReport` so callers can account for every
input row (parsed + rejected = rows read).
"""
from __future__ import annotations

import csv
import io
import logging
import math
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import IO, Iterable, Sequence

import numpy as np

from .errors import DataError

log = logging.getLogger(__name__)

MATERIALS = ("Copper", "Lead", "Galvanized", "Tubeloy", "Plastic", "Other", "Unknown")

# Token spellings seen in city-style records, including the historical
# misspelling "Unkown".
_MATERIAL_TOKENS = {
    "copper": "Copper",
    "lead": "Lead",
    "galvanized": "Galvanized",
    "galv": "Galvanized",
    "tubeloy": "Tubeloy",
    "plastic": "Plastic",
    "other": "Other",
    "unknown": "Unknown",
    "unkown": "Unknown",
    "?": "Unknown",
    "": "Unknown",
}

# Street-suffix and directional standardization applied token-wise during
# address normalization.  Shipped as data: extend here for new corpora.
ADDRESS_SUFFIXES = {
    "STREET": "ST",
    "STR": "ST",
    "AVENUE": "AVE",
    "AVENU": "AVE",
    "AV": "AVE",
    "BOULEVARD": "BLVD",
    "BOUL": "BLVD",
    "DRIVE": "DR",
    "ROAD": "RD",
    "LANE": "LN",
    "COURT": "CT",
    "PLACE": "PL",
    "CIRCLE": "CIR",
    "HIGHWAY": "HWY",
    "PARKWAY": "PKWY",
    "TERRACE": "TER",
    "TRAIL": "TRL",
    "SQUARE": "SQ",
    "NORTH": "N",
    "SOUTH": "S",
    "EAST": "E",
    "WEST": "W",
}

# Flint-area default; rows outside are flagged, never dropped.
DEFAULT_BOUNDING_BOX = (42.85, 43.15, -83.85, -83.50)  # lat_min, lat_max, lon_min, lon_max

EARTH_RADIUS_KM = 6371.0088


@dataclass
class ParcelRecord:
    pid: str
    zip: str | None = None
    owner_type: str | None = None
    homestead: str | None = None
    homestead_percent: float | None = None
    home_sev: float | None = None
    land_value: float | None = None
    land_improvements_value: float | None = None
    residential_building_value: float | None = None
    commercial_building_value: float | None = None
    building_storeys: str | None = None
    parcel_acres: float | None = None
    use_type: str | None = None
    prop_class: str | None = None
    old_prop_class: str | None = None
    year_built: float | None = None
    usps_vacancy: str | None = None
    zoning: str | None = None
    future_landuse: str | None = None
    draft_zone: str | None = None
    housing_condition_2012: str | None = None
    housing_condition_2014: str | None = None
    commercial_condition_2013: str | None = None
    rental: str | None = None
    residential_building_style: str | None = None
    latitude: float | None = None
    longitude: float | None = None
    hydrant_type: str | None = None
    ward: str | None = None
    precinct: str | None = None
    centract: float | None = None
    cenblock: str | None = None
    sl_type: str | None = None
    sl_type2: str | None = None
    sl_lead: str | None = None
    # Auxiliary, not part of the 35 modeling attributes.
    address: str | None = None
    coord_flagged: bool = False


@dataclass
class LeadTest:
    sample_date: str | None
    lead_ppb: float
    copper_ppb: float | None = None
    address: str = ""
    pid: str | None = None


@dataclass
class ServiceLineRecord:
    pid: str
    raw_label: str
    private_material: str
    public_material: str
    # True when a single token was applied to both segments (ambiguous source).
    single_token: bool = False


@dataclass
class InspectionRecord:
    pid: str
    private_material_inspected: str


@dataclass
class HydrantRecord:
    hydrant_id: str
    hydrant_type: str
    latitude: float
    longitude: float


@dataclass
class ParseReport:
    rows_read: int = 0
    rows_rejected: int = 0
    per_column_missing: dict[str, int] = field(default_factory=dict)
    rejected_rows: list[int] = field(default_factory=list)
    columns_absent: list[str] = field(default_factory=list)
    warnings: int = 0

    def flag_missing(self, column: str) -> None:
        self.per_column_missing[column] = self.per_column_missing.get(column, 0) + 1

    def to_json(self) -> dict:
        return {
            "rows_read": self.rows_read,
            "rows_rejected": self.rows_rejected,
            "per_column_missing": dict(sorted(self.per_column_missing.items())),
        }


@dataclass
class ConfusionTable:
    row_labels: list[str]
    col_labels: list[str]
    counts: np.ndarray

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def get(self, row: str, col: str) -> int:
        return int(self.counts[self.row_labels.index(row), self.col_labels.index(col)])


# --- header handling ---------------------------------------------------------

def _norm_header(name: str) -> str:
    return re.sub(r"[^a-z0-9]+", "_", name.strip().lower()).strip("_")


# Appendix-style column names -> ParcelRecord field.  Field names themselves
# are accepted too, so round-tripping our own exports needs no special casing.
_PARCEL_HEADERS = {
    "pid": "pid",
    "parcel_id": "pid",
    "property_zip_code": "zip",
    "zip": "zip",
    "owner_type": "owner_type",
    "homestead": "homestead",
    "homestead_percent": "homestead_percent",
    "homesev": "home_sev",
    "home_sev": "home_sev",
    "land_value": "land_value",
    "land_improvements_value": "land_improvements_value",
    "residential_building_value": "residential_building_value",
    "commercial_building_value": "commercial_building_value",
    "building_storeys": "building_storeys",
    "parcel_acres": "parcel_acres",
    "use_type": "use_type",
    "prop_class": "prop_class",
    "old_prop_class": "old_prop_class",
    "year_built": "year_built",
    "usps_vacancy": "usps_vacancy",
    "zoning": "zoning",
    "future_landuse": "future_landuse",
    "draft_zone": "draft_zone",
    "housing_condition_2012": "housing_condition_2012",
    "housing_condition_2014": "housing_condition_2014",
    "commercial_condition_2013": "commercial_condition_2013",
    "rental": "rental",
    "residential_building_style": "residential_building_style",
    "latitude": "latitude",
    "longitude": "longitude",
    "hydrant_type": "hydrant_type",
    "ward": "ward",
    "precinct": "precinct",
    "centract": "centract",
    "cenblock": "cenblock",
    "sl_type": "sl_type",
    "sl_type2": "sl_type2",
    "sl_lead": "sl_lead",
    "address": "address",
}

_NUMERIC_PARCEL_FIELDS = {
    "homestead_percent",
    "home_sev",
    "land_value",
    "land_improvements_value",
    "residential_building_value",
    "commercial_building_value",
    "parcel_acres",
    "year_built",
    "latitude",
    "longitude",
    "centract",
}


def _open_source(source) -> tuple[IO[str], bool]:
    if hasattr(source, "read"):
        return source, False
    return open(Path(source), "r", encoding="utf-8", newline=""), True


def _read_rows(source) -> tuple[list[str], list[list[str]]]:
    fh, owned = _open_source(source)
    try:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            return [], []
        return header, list(reader)
    finally:
        if owned:
            fh.close()


def _parse_float(cell: str) -> float | None:
    cell = cell.strip()
    if not cell:
        return None
    try:
        value = float(cell.replace("$", "").replace(",", ""))
    except ValueError:
        return None
    if not math.isfinite(value):
        return None
    return value


# --- parsers -----------------------------------------------------------------

def parse_parcels(source, bounding_box=DEFAULT_BOUNDING_BOX) -> tuple[list[ParcelRecord], ParseReport]:
    """Parse a parcel CSV into records, flagging unparseable or out-of-range cells.

    Raises DataError when the pid column is missing or any pid repeats.
    """
    header, rows = _read_rows(source)
    report = ParseReport(rows_read=len(rows))

    col_to_field: dict[int, str] = {}
    seen_fields = set()
    for i, name in enumerate(header):
        fieldname = _PARCEL_HEADERS.get(_norm_header(name))
        if fieldname and fieldname not in seen_fields:
            col_to_field[i] = fieldname
            seen_fields.add(fieldname)
    if "pid" not in seen_fields:
        raise DataError("parcel file has no pid column")
    report.columns_absent = sorted(set(_PARCEL_HEADERS.values()) - seen_fields - {"address"})

    lat_min, lat_max, lon_min, lon_max = bounding_box
    records: list[ParcelRecord] = []
    for row in rows:
        values: dict[str, object] = {}
        for i, fieldname in col_to_field.items():
            cell = row[i].strip() if i < len(row) else ""
            if fieldname == "pid":
                values["pid"] = cell
            elif fieldname in _NUMERIC_PARCEL_FIELDS:
                if cell == "":
                    values[fieldname] = None
                else:
                    parsed = _parse_float(cell)
                    if parsed is None:
                        report.flag_missing(fieldname)
                    values[fieldname] = parsed
            else:
                values[fieldname] = cell or None
        rec = ParcelRecord(**values)  # type: ignore[arg-type]
        if rec.year_built is not None and not (1800 <= rec.year_built <= 2100):
            rec.year_built = None
            report.flag_missing("year_built")
        if rec.homestead_percent is not None and not (0 <= rec.homestead_percent <= 100):
            rec.homestead_percent = None
            report.flag_missing("homestead_percent")
        if rec.latitude is not None and rec.longitude is not None:
            if not (lat_min <= rec.latitude <= lat_max and lon_min <= rec.longitude <= lon_max):
                rec.coord_flagged = True
        records.append(rec)

    if not all(r.pid for r in records):
        raise DataError("parcel rows with empty pid")
    counts: dict[str, int] = {}
    for r in records:
        counts[r.pid] = counts.get(r.pid, 0) + 1
    dupes = sorted(pid for pid, n in counts.items() if n > 1)
    if dupes:
        raise DataError(f"duplicate parcel ids: {dupes[:20]}")
    return records, report


def parse_tests(source) -> tuple[list[LeadTest], ParseReport]:
    """Parse lead tests; rows with negative lead are rejected and counted."""
    header, rows = _read_rows(source)
    report = ParseReport(rows_read=len(rows))
    if not header and not rows:
        return [], report

    def find(*keys: str) -> int | None:
        for i, name in enumerate(header):
            norm = _norm_header(name)
            if any(k in norm for k in keys):
                return i
        return None

    lead_col = find("lead")
    date_col = find("date")
    copper_col = find("copper")
    addr_col = find("address", "addr")
    pid_col = find("pid", "parcel_id")
    if lead_col is None:
        raise DataError("test file has no lead column")

    tests: list[LeadTest] = []
    for rownum, row in enumerate(rows, start=2):  # 1-based, after header
        def cell(col: int | None) -> str:
            return row[col].strip() if col is not None and col < len(row) else ""

        lead = _parse_float(cell(lead_col))
        if lead is None:
            report.flag_missing("lead_ppb")
            report.rows_rejected += 1
            report.rejected_rows.append(rownum)
            continue
        if lead < 0:
            report.rows_rejected += 1
            report.rejected_rows.append(rownum)
            continue
        copper = _parse_float(cell(copper_col))
        if copper is not None and copper < 0:
            report.rows_rejected += 1
            report.rejected_rows.append(rownum)
            continue
        tests.append(
            LeadTest(
                sample_date=cell(date_col) or None,
                lead_ppb=lead,
                copper_ppb=copper,
                address=cell(addr_col),
                pid=cell(pid_col) or None,
            )
        )
    return tests, report


def split_sl_label(raw_label: str) -> tuple[str, str]:
    """Split a city service-line label into (private, public) materials.

    "X/Y" puts X on the private segment and Y on the public one; a single
    token applies to both; blanks and "?" map to Unknown; any unrecognized
    token maps to Other.
    """
    raw = (raw_label or "").strip()
    if not raw:
        return "Unknown", "Unknown"
    parts = [p.strip() for p in raw.split("/", 1)]

    def material(token: str) -> str:
        return _MATERIAL_TOKENS.get(token.lower(), "Other")

    if len(parts) == 1:
        m = material(parts[0])
        return m, m
    return material(parts[0]), material(parts[1])


def parse_service_lines(source) -> tuple[list[ServiceLineRecord], ParseReport]:
    header, rows = _read_rows(source)
    report = ParseReport(rows_read=len(rows))

    pid_col = label_col = None
    for i, name in enumerate(header):
        norm = _norm_header(name)
        if norm in ("pid", "parcel_id") and pid_col is None:
            pid_col = i
        elif ("sl" in norm or "label" in norm or "record" in norm or "material" in norm) and label_col is None:
            label_col = i
    if pid_col is None or label_col is None:
        raise DataError("service line file needs pid and label columns")

    records = []
    for row in rows:
        pid = row[pid_col].strip() if pid_col < len(row) else ""
        raw = row[label_col].strip() if label_col < len(row) else ""
        if not pid:
            report.rows_rejected += 1
            continue
        private, public = split_sl_label(raw)
        single = bool(raw) and "/" not in raw
        if "Other" in (private, public):
            report.warnings += 1
        records.append(ServiceLineRecord(pid, raw, private, public, single_token=single))
    return records, report


def parse_inspections(source) -> tuple[list[InspectionRecord], ParseReport]:
    header, rows = _read_rows(source)
    report = ParseReport(rows_read=len(rows))
    pid_col = mat_col = None
    for i, name in enumerate(header):
        norm = _norm_header(name)
        if norm in ("pid", "parcel_id") and pid_col is None:
            pid_col = i
        elif mat_col is None and ("material" in norm or "inspect" in norm):
            mat_col = i
    if pid_col is None or mat_col is None:
        raise DataError("inspection file needs pid and material columns")
    records = []
    seen = set()
    for row in rows:
        pid = row[pid_col].strip()
        if pid in seen:
            raise DataError(f"duplicate inspection for pid {pid}")
        seen.add(pid)
        material, _ = split_sl_label(row[mat_col].strip())
        records.append(InspectionRecord(pid, material))
    return records, report


def parse_hydrants(source) -> tuple[list[HydrantRecord], ParseReport]:
    header, rows = _read_rows(source)
    report = ParseReport(rows_read=len(rows))
    cols: dict[str, int] = {}
    for i, name in enumerate(header):
        norm = _norm_header(name)
        if norm in ("hydrant_id", "id") and "id" not in cols:
            cols["id"] = i
        elif "type" in norm and "type" not in cols:
            cols["type"] = i
        elif norm == "latitude":
            cols["lat"] = i
        elif norm == "longitude":
            cols["lon"] = i
    if set(cols) != {"id", "type", "lat", "lon"}:
        raise DataError("hydrant file needs id, type, latitude, longitude columns")
    records = []
    for rownum, row in enumerate(rows, start=2):
        lat = _parse_float(row[cols["lat"]])
        lon = _parse_float(row[cols["lon"]])
        if lat is None or lon is None:
            report.rows_rejected += 1
            report.rejected_rows.append(rownum)
            continue
        records.append(HydrantRecord(row[cols["id"]].strip(), row[cols["type"]].strip(), lat, lon))
    return records, report


# --- address matching --------------------------------------------------------

def normalize_address(address: str) -> str:
    """Uppercase, strip punctuation, collapse whitespace, standardize suffixes."""
    cleaned = re.sub(r"[^A-Z0-9 ]+", " ", (address or "").upper())
    tokens = [ADDRESS_SUFFIXES.get(tok, tok) for tok in cleaned.split()]
    return " ".join(tokens)


@dataclass
class MatchResult:
    matched: list[LeadTest]
    discarded_unmatched: int = 0
    discarded_ambiguous: int = 0

    @property
    def discarded(self) -> int:
        return self.discarded_unmatched + self.discarded_ambiguous


def match_tests_to_parcels(tests: Sequence[LeadTest], parcels: Sequence[ParcelRecord]) -> MatchResult:
    """Attach each test to at most one parcel by pid or normalized address.

    Addresses that normalize to more than one parcel are discarded rather
    than guessed, and counted separately from plain misses.
    """
    by_pid = {p.pid for p in parcels}
    by_address: dict[str, list[str]] = {}
    for p in parcels:
        if p.address:
            by_address.setdefault(normalize_address(p.address), []).append(p.pid)

    result = MatchResult(matched=[])
    for test in tests:
        if test.pid is not None:
            if test.pid in by_pid:
                result.matched.append(test)
            else:
                result.discarded_unmatched += 1
            continue
        pids = by_address.get(normalize_address(test.address), [])
        if len(pids) == 1:
            result.matched.append(replace(test, pid=pids[0]))
        elif len(pids) > 1:
            result.discarded_ambiguous += 1
        else:
            result.discarded_unmatched += 1
    return result


# --- hydrants ----------------------------------------------------------------

def haversine_km(lat1, lon1, lat2, lon2):
    """Great-circle distance in kilometers; accepts scalars or arrays."""
    phi1, phi2 = np.radians(lat1), np.radians(lat2)
    dphi = phi2 - phi1
    dlam = np.radians(lon2) - np.radians(lon1)
    a = np.sin(dphi / 2.0) ** 2 + np.cos(phi1) * np.cos(phi2) * np.sin(dlam / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(a))


def nearest_hydrant(parcel_coords: tuple[float, float] | None, hydrants: Sequence[HydrantRecord]) -> str:
    """Type of the hydrant closest by great-circle distance.

    Ties go to the lexicographically smallest hydrant_id; a parcel without
    coordinates gets "Unknown".
    """
    if not hydrants:
        raise DataError("no hydrants available for matching")
    if parcel_coords is None or parcel_coords[0] is None or parcel_coords[1] is None:
        return "Unknown"
    ordered = sorted(hydrants, key=lambda h: h.hydrant_id)
    lat = np.array([h.latitude for h in ordered])
    lon = np.array([h.longitude for h in ordered])
    d = haversine_km(parcel_coords[0], parcel_coords[1], lat, lon)
    return ordered[int(np.argmin(d))].hydrant_type


def assign_hydrants(parcels: Sequence[ParcelRecord], hydrants: Sequence[HydrantRecord]) -> list[ParcelRecord]:
    """Fill hydrant_type on every parcel; output independent of iteration order."""
    if not hydrants:
        raise DataError("no hydrants available for matching")
    ordered = sorted(hydrants, key=lambda h: h.hydrant_id)
    hlat = np.array([h.latitude for h in ordered])
    hlon = np.array([h.longitude for h in ordered])
    types = [h.hydrant_type for h in ordered]
    out = []
    for p in parcels:
        if p.latitude is None or p.longitude is None:
            out.append(replace(p, hydrant_type="Unknown"))
        else:
            d = haversine_km(p.latitude, p.longitude, hlat, hlon)
            out.append(replace(p, hydrant_type=types[int(np.argmin(d))]))
    return out


def apply_service_lines(parcels: Sequence[ParcelRecord], sl_records: Sequence[ServiceLineRecord]) -> list[ParcelRecord]:
    """Fill sl_type/sl_type2/sl_lead from service-line records keyed by pid.

    sl_lead is "Lead" when either segment is Lead, "Unknown" when both are
    Unknown, otherwise "No Lead"; alloys such as Tubeloy stay distinct and
    are not treated as lead-bearing.
    """
    by_pid = {r.pid: r for r in sl_records}
    out = []
    for p in parcels:
        rec = by_pid.get(p.pid)
        if rec is None:
            out.append(p)
            continue
        if "Lead" in (rec.private_material, rec.public_material):
            lead_flag = "Lead"
        elif rec.private_material == rec.public_material == "Unknown":
            lead_flag = "Unknown"
        else:
            lead_flag = "No Lead"
        out.append(replace(p, sl_type=rec.private_material, sl_type2=rec.public_material, sl_lead=lead_flag))
    return out


# --- record/inspection agreement ---------------------------------------------

def sl_confusion_matrix(records: Sequence[ServiceLineRecord], inspections: Sequence[InspectionRecord]) -> ConfusionTable:
    """Cross-tabulate record labels against inspected private materials.

    Only pids present in both inputs contribute.
    """
    seen = set()
    for ins in inspections:
        if ins.pid in seen:
            raise DataError(f"duplicate inspection for pid {ins.pid}")
        seen.add(ins.pid)
    by_pid = {r.pid: r for r in records}

    pairs = [(by_pid[i.pid].raw_label, i.private_material_inspected) for i in inspections if i.pid in by_pid]
    row_labels = sorted({r for r, _ in pairs})
    col_labels = sorted({c for _, c in pairs})
    counts = np.zeros((len(row_labels), len(col_labels)), dtype=np.int64)
    row_idx = {r: i for i, r in enumerate(row_labels)}
    col_idx = {c: i for i, c in enumerate(col_labels)}
    for r, c in pairs:
        counts[row_idx[r], col_idx[c]] += 1
    return ConfusionTable(row_labels, col_labels, counts)


# --- composed load ------------------------------------------------------------

@dataclass
class City:
    parcels: list[ParcelRecord]
    tests: list[LeadTest]
    service_lines: list[ServiceLineRecord]
    hydrants: list[HydrantRecord]
    matched: MatchResult
    reports: dict[str, ParseReport]

    def parcels_by_pid(self) -> dict[str, ParcelRecord]:
        return {p.pid: p for p in self.parcels}


def load_city(parcel_source, test_source, sl_source, hydrant_source) -> City:
    """Parse all four inputs and perform the joins the model consumes."""
    parcels, p_report = parse_parcels(parcel_source)
    tests, t_report = parse_tests(test_source)
    sls, s_report = parse_service_lines(sl_source)
    hydrants, h_report = parse_hydrants(hydrant_source)

    parcels = apply_service_lines(parcels, sls)
    parcels = assign_hydrants(parcels, hydrants)
    matched = match_tests_to_parcels(tests, parcels)
    return City(
        parcels=parcels,
        tests=tests,
        service_lines=sls,
        hydrants=hydrants,
        matched=matched,
        reports={"parcels": p_report, "tests": t_report, "service_lines": s_report, "hydrants": h_report},
    )

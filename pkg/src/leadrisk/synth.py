"""Synthetic-city generator with a known ground-truth risk function.

Stands in for the private municipal data: parcels are laid out in spatial
clusters, each parcel gets a true exceedance probability from a linear risk
logit, and lead readings are drawn from a log-normal whose probability of
exceeding 15 ppb equals that ground truth exactly.  The emitted CSV files
parse cleanly through the ingest module, and the stored probabilities act as
the Bayes-optimal scores no learner can beat in expectation.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from statistics import NormalDist

import numpy as np

from .errors import DataError
from .features import dataset_from_arrays
from .metrics import auc
from .util import fmt_float, rng_for, sigmoid

_NORMAL = NormalDist()

ACTION_LEVEL = 15.0

_STREETS = [
    ("MAPLE", "ST"),
    ("OAK", "AVE"),
    ("RIVERVIEW", "DR"),
    ("SAGINAW", "ST"),
    ("CEDAR", "LN"),
    ("HARRISON", "BLVD"),
    ("DUPONT", "AVE"),
    ("LAPEER", "RD"),
    ("WELCH", "CT"),
    ("CHEVROLET", "AVE"),
]

# Inverse-suffix variants used to jitter test addresses; matching must undo them.
_SUFFIX_VARIANTS = {
    "ST": ["St.", "Street", "ST"],
    "AVE": ["Ave", "Avenue", "AVE."],
    "DR": ["Dr.", "Drive", "DR"],
    "LN": ["Lane", "Ln", "LN."],
    "BLVD": ["Blvd", "Boulevard", "BLVD"],
    "RD": ["Rd.", "Road", "RD"],
    "CT": ["Ct", "Court", "CT."],
}

_LEAD_LABELS = ["Lead", "Copper/Lead", "Lead/Tubeloy"]
_SAFE_LABELS = ["Copper", "Galvanized/Other", "Unkown/Other", "Tubeloy", "Copper/?", ""]


@dataclass(frozen=True)
class GeneratorConfig:
    n_parcels: int = 400
    p_zero: float = 0.5
    tests_per_parcel_lambda: float = 4.0
    target_rate: float = 0.083
    n_clusters: int = 8
    coef_cluster: float = 0.7
    coef_year: float = 0.5
    # Extra risk for homes built in the mid-century band; non-linear in year, so
    # linear learners cannot absorb it and stacking has something to add.
    coef_year_band: float = 0.8
    year_band: tuple[int, int] = (1928, 1952)
    coef_sl: float = 0.8
    coef_land: float = 0.4
    coef_noise: float = 0.0
    sigma_log_lead: float = 1.1
    seed: int = 0

    def __post_init__(self):
        if self.n_parcels < 1:
            raise DataError("n_parcels must be at least 1")
        if not (0.0 < self.target_rate < 1.0):
            raise DataError("target_rate must lie in (0, 1)")
        if not (0.0 <= self.p_zero < 1.0):
            raise DataError("p_zero must lie in [0, 1)")
        if self.sigma_log_lead <= 0:
            raise DataError("sigma_log_lead must be positive")


@dataclass
class GeneratedCity:
    parcels_path: Path
    tests_path: Path
    sl_path: Path
    hydrants_path: Path
    ground_truth_path: Path
    ground_truth: dict[str, float]
    intercept: float
    n_tests: int

    def paths(self) -> list[Path]:
        return [self.parcels_path, self.tests_path, self.sl_path, self.hydrants_path, self.ground_truth_path]


def solve_intercept(signals: np.ndarray, target: float, tol: float = 1e-4) -> float:
    """Bisection for the logit intercept matching the target mean probability."""
    lo, hi = -40.0, 40.0
    if not (sigmoid(signals + lo).mean() < target < sigmoid(signals + hi).mean()):
        raise DataError("target rate unreachable for the configured signals")
    for _ in range(200):
        mid = (lo + hi) / 2.0
        if sigmoid(signals + mid).mean() < target:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-13:
            break
    b = (lo + hi) / 2.0
    if abs(float(sigmoid(signals + b).mean()) - target) > tol:
        raise DataError("intercept search did not reach the target rate")
    return b


def lead_mu(p: float, sigma: float) -> float:
    """Log-normal location giving P(lead > 15) == p for scale sigma."""
    p = min(max(p, 1e-12), 1.0 - 1e-12)
    return math.log(ACTION_LEVEL) - sigma * _NORMAL.inv_cdf(1.0 - p)


def draw_leads(p: float, sigma: float, rng: np.random.Generator, size: int) -> np.ndarray:
    return np.exp(rng.normal(lead_mu(p, sigma), sigma, size=size))


def _address(i: int) -> str:
    name, suffix = _STREETS[i % len(_STREETS)]
    number = 100 + i // len(_STREETS)
    return f"{number} {name} {suffix}"


def _jitter_address(address: str, rng: np.random.Generator) -> str:
    tokens = address.split()
    suffix = tokens[-1]
    variants = _SUFFIX_VARIANTS.get(suffix)
    if variants:
        tokens[-1] = variants[int(rng.integers(0, len(variants)))]
    text = " ".join(tokens)
    style = int(rng.integers(0, 3))
    if style == 1:
        text = text.title()
    elif style == 2:
        text = text.lower()
    return text


def generate(config: GeneratorConfig, out_dir) -> GeneratedCity:
    """Write the four CSV inputs plus the ground-truth JSON under out_dir."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = rng_for(config.seed)
    n = config.n_parcels

    # Spatial clusters inside the Flint-area bounding box.
    centers_lat = rng.uniform(42.95, 43.10, size=config.n_clusters)
    centers_lon = rng.uniform(-83.78, -83.58, size=config.n_clusters)
    cluster_effect = rng.normal(0.0, config.coef_cluster, size=config.n_clusters)
    cluster_year = rng.uniform(1925.0, 1972.0, size=config.n_clusters)

    cluster = rng.integers(0, config.n_clusters, size=n)
    lat = np.clip(centers_lat[cluster] + rng.normal(0.0, 0.006, size=n), 42.86, 43.14)
    lon = np.clip(centers_lon[cluster] + rng.normal(0.0, 0.006, size=n), -83.84, -83.51)

    year = np.clip(np.round(rng.normal(cluster_year[cluster], 11.0)), 1895, 2005).astype(int)
    land_value = np.round(np.exp(rng.normal(9.8, 0.55, size=n)), 2)
    z_land = (np.log(land_value) - 9.8) / 0.55
    z_year = (1950.0 - year) / 20.0

    p_lead_line = sigmoid((1945.0 - year) / 10.0)
    has_lead_line = rng.random(n) < p_lead_line
    sl_labels = [
        (_LEAD_LABELS[int(rng.integers(0, len(_LEAD_LABELS)))] if lead else _SAFE_LABELS[int(rng.integers(0, len(_SAFE_LABELS)))])
        for lead in has_lead_line
    ]
    noise_col = rng.normal(0.0, 1.0, size=n)

    in_band = (year >= config.year_band[0]) & (year <= config.year_band[1])
    signals = (
        cluster_effect[cluster]
        + config.coef_year * z_year
        + config.coef_year_band * in_band.astype(np.float64)
        + config.coef_sl * has_lead_line.astype(np.float64)
        - config.coef_land * z_land
        + config.coef_noise * noise_col
    )
    intercept = solve_intercept(signals, config.target_rate, tol=0.002)
    p_true = sigmoid(signals + intercept)

    # Parcel ids are block-assigned by cluster, so the numeric pid is itself a
    # coarse location proxy (as in real municipal numbering).
    pids = [f"{41 + int(cluster[i])}-{i:06d}" for i in range(n)]
    ground_truth = {pid: float(p) for pid, p in zip(pids, p_true)}

    owner_types = ["Residential", "Commercial", "Industrial"]
    conditions = ["Good", "Fair", "Poor", ""]
    styles = ["Bungalow", "Ranch", "Colonial", "Two-Story", ""]

    parcels_path = out / "parcels.csv"
    with open(parcels_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            [
                "PID", "Property Zip Code", "Owner Type", "Homestead", "Homestead Percent", "HomeSEV",
                "Land Value", "Land Improvements Value", "Residential Building Value",
                "Commercial Building Value", "Building Storeys", "Parcel Acres", "Use Type", "Prop Class",
                "Old Prop Class", "Year Built", "USPS Vacancy", "Zoning", "Future Landuse", "DRAFT Zone",
                "Housing Condition 2012", "Housing Condition 2014", "Commercial Condition 2013", "Rental",
                "Residential Building Style", "Latitude", "Longitude", "Ward", "PRECINCT", "CENTRACT",
                "CENBLOCK", "Address",
            ]
        )
        for i in range(n):
            c = int(cluster[i])
            owner = owner_types[int(rng.integers(0, 3))] if rng.random() > 0.02 else ""
            home_sev = round(float(land_value[i]) * float(rng.uniform(0.8, 3.0)), 2)
            writer.writerow(
                [
                    pids[i],
                    f"485{c:02d}",
                    owner,
                    "Yes" if rng.random() < 0.6 else "No",
                    int(rng.integers(0, 101)),
                    fmt_float(home_sev),
                    fmt_float(land_value[i]),
                    fmt_float(round(float(rng.uniform(0, 20000)), 2)),
                    fmt_float(round(float(rng.uniform(5000, 120000)), 2)),
                    "0",
                    str(float(rng.integers(1, 4)) if rng.random() < 0.9 else 1.5),
                    fmt_float(round(float(rng.uniform(0.05, 2.0)), 3)),
                    "Residential",
                    f"Class-{int(rng.integers(1, 5))}",
                    f"Class-{int(rng.integers(1, 5))}",
                    str(int(year[i])),
                    "Occupied" if rng.random() < 0.8 else "Vacant",
                    f"Z{int(rng.integers(1, 6))}",
                    "Residential" if rng.random() < 0.9 else "Mixed",
                    f"D{int(rng.integers(1, 4))}",
                    conditions[int(rng.integers(0, 4))],
                    conditions[int(rng.integers(0, 4))],
                    conditions[int(rng.integers(0, 4))],
                    "Yes" if rng.random() < 0.3 else "No",
                    styles[int(rng.integers(0, 5))],
                    fmt_float(round(float(lat[i]), 6)),
                    fmt_float(round(float(lon[i]), 6)),
                    f"W{c + 1}",
                    f"P{c + 1:02d}",
                    str(1500 + c * 120 + int(rng.integers(0, 80))),
                    f"B{c:02d}{int(rng.integers(0, 50)):03d}",
                    _address(i),
                ]
            )

    sl_path = out / "service_lines.csv"
    with open(sl_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["PID", "SL Record"])
        for pid, label in zip(pids, sl_labels):
            writer.writerow([pid, label])

    hydrants_path = out / "hydrants.csv"
    with open(hydrants_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["Hydrant ID", "Hydrant Type", "Latitude", "Longitude"])
        hid = 0
        for c in range(config.n_clusters):
            decade = int(cluster_year[c] // 10) * 10
            for _ in range(int(rng.integers(3, 8))):
                writer.writerow(
                    [
                        f"H{hid:05d}",
                        f"Model-{decade}",
                        fmt_float(round(float(centers_lat[c] + rng.normal(0, 0.004)), 6)),
                        fmt_float(round(float(centers_lon[c] + rng.normal(0, 0.004)), 6)),
                    ]
                )
                hid += 1

    tests_path = out / "tests.csv"
    n_tests = 0
    base_date = np.datetime64("2015-09-01")
    with open(tests_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["Sample Date", "Lead (ppb)", "Copper (ppb)", "Address"])
        for i in range(n):
            if rng.random() < config.p_zero:
                continue
            count = int(rng.poisson(config.tests_per_parcel_lambda))
            if count == 0:
                continue
            leads = draw_leads(float(p_true[i]), config.sigma_log_lead, rng, count)
            for lead in leads:
                date = base_date + int(rng.integers(0, 300))
                copper = round(float(np.exp(rng.normal(3.5, 1.0))), 1) if rng.random() < 0.9 else 0.0
                writer.writerow([str(date), fmt_float(float(lead)), fmt_float(copper), _jitter_address(_address(i), rng)])
                n_tests += 1

    ground_truth_path = out / "ground_truth.json"
    doc = {
        "intercept": intercept,
        "sigma_log_lead": config.sigma_log_lead,
        "target_rate": config.target_rate,
        "p_by_pid": dict(sorted(ground_truth.items())),
    }
    ground_truth_path.write_text(json.dumps(doc, sort_keys=True, indent=1), encoding="utf-8")

    return GeneratedCity(
        parcels_path=parcels_path,
        tests_path=tests_path,
        sl_path=sl_path,
        hydrants_path=hydrants_path,
        ground_truth_path=ground_truth_path,
        ground_truth=ground_truth,
        intercept=intercept,
        n_tests=n_tests,
    )


def bayes_auc(true_probs, labels) -> float:
    """AUC of the generating probabilities against realized labels.

    This is the ceiling any learner can approach on synthetic data.
    """
    return auc(true_probs, labels)


def sample_calibrated(n: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Self-calibrated sample: labels are drawn from the reported scores.

    The score distribution mirrors the imbalanced regime: a heavy mass of
    small probabilities plus a thinner band up to 0.6, so low-probability
    bins are dense and high-probability bins sparse.
    """
    rng = rng_for(seed)
    low = rng.beta(1.5, 16.0, size=n)
    band = rng.uniform(0.05, 0.6, size=n)
    p = np.where(rng.random(n) < 0.75, low, band)
    p = np.minimum(p, 0.6)
    y = (rng.random(n) < p).astype(np.int8)
    return p, y


def toy_signal_dataset(
    n_groups: int,
    rows_per_group: int,
    n_noise: int,
    coef: float,
    seed: int,
    base_rate_logit: float = -1.0,
):
    """Small grouped dataset with one informative numeric feature.

    Returns (dataset, true_probs); the noise columns carry no signal.
    """
    rng = rng_for(seed)
    signal_g = rng.normal(0.0, 1.0, size=n_groups)
    p_g = sigmoid(base_rate_logit + coef * signal_g)

    n = n_groups * rows_per_group
    groups = np.repeat([f"G{i:05d}" for i in range(n_groups)], rows_per_group)
    signal = np.repeat(signal_g, rows_per_group)
    p = np.repeat(p_g, rows_per_group)
    labels = (rng.random(n) < p).astype(np.int8)
    columns = {"signal": signal}
    for j in range(n_noise):
        columns[f"noise_{j}"] = rng.normal(0.0, 1.0, size=n)
    kinds = {name: "numeric" for name in columns}
    dataset = dataset_from_arrays(columns, kinds, labels, groups)
    return dataset, p

"""Ranking and probabilistic metrics, curves, and feature-importance sweeps."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .util import rng_for

PROB_CLIP = 1e-15


def _check_pair(probabilities, labels):
    p = np.asarray(probabilities, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if p.shape != y.shape or p.ndim != 1:
        raise DataError(f"shape mismatch: {p.shape} vs {y.shape}")
    return p, y


def auc(probabilities, labels) -> float:
    """Mann-Whitney statistic via average ranks; tied scores count one half.

    Equals the fraction of (positive, negative) pairs where the positive
    scores strictly higher, plus half the tied pairs.
    """
    p, y = _check_pair(probabilities, labels)
    n_pos = int(y.sum())
    n_neg = int(len(y) - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise DataError("auc undefined for single-class labels")

    order = np.argsort(p, kind="mergesort")
    sp = p[order]
    n = len(p)
    starts = np.r_[0, np.flatnonzero(sp[:-1] != sp[1:]) + 1]
    ends = np.r_[starts[1:], n]
    avg_rank = (starts + ends - 1) / 2.0 + 1.0  # 1-based midrank per tie group
    ranks = np.empty(n, dtype=np.float64)
    ranks[order] = np.repeat(avg_rank, ends - starts)
    rank_sum = float(ranks[y == 1].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def log_loss(probabilities, labels) -> float:
    """Negative mean Bernoulli log-likelihood with probabilities clipped away from 0/1."""
    p, y = _check_pair(probabilities, labels)
    if np.any((p < 0) | (p > 1)):
        raise DataError("probabilities must lie in [0, 1]")
    pc = np.clip(p, PROB_CLIP, 1.0 - PROB_CLIP)
    return float(-np.mean(y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc)))


@dataclass(frozen=True)
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray  # descending; +inf anchors the (0, 0) point

    def points(self) -> list[tuple[float, float, float]]:
        return list(zip(self.fpr.tolist(), self.tpr.tolist(), self.thresholds.tolist()))

    def trapezoid_area(self) -> float:
        return float(np.trapz(self.tpr, self.fpr))


def roc_points(probabilities, labels) -> RocCurve:
    """ROC curve with one point per distinct score, thresholds descending."""
    p, y = _check_pair(probabilities, labels)
    n_pos = int(y.sum())
    n_neg = int(len(y) - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise DataError("roc undefined for single-class labels")

    order = np.argsort(-p, kind="mergesort")
    sp = p[order]
    sy = y[order]
    tps = np.cumsum(sy)
    fps = np.cumsum(1.0 - sy)
    last_of_group = np.r_[sp[1:] != sp[:-1], True]
    tpr = np.r_[0.0, tps[last_of_group] / n_pos]
    fpr = np.r_[0.0, fps[last_of_group] / n_neg]
    thresholds = np.r_[np.inf, sp[last_of_group]]
    return RocCurve(fpr=fpr, tpr=tpr, thresholds=thresholds)


@dataclass(frozen=True)
class CalibrationBin:
    lo: float
    hi: float
    count: int
    mean_predicted: float  # NaN when empty
    fraction_positive: float  # NaN when empty
    ci_low: float
    ci_high: float


@dataclass(frozen=True)
class CalibrationCurve:
    bins: list[CalibrationBin]
    n_bootstrap: int

    @property
    def total(self) -> int:
        return sum(b.count for b in self.bins)


def calibration_curve(probabilities, labels, n_bins: int = 10, n_bootstrap: int = 200, seed: int = 0) -> CalibrationCurve:
    """Equal-width reliability bins with percentile-bootstrap 95% intervals.

    Intervals come from resampling labels within each bin; empty bins are
    emitted with count 0 and NaN statistics.
    """
    p, y = _check_pair(probabilities, labels)
    if n_bins < 2:
        raise DataError("need at least 2 bins")
    if n_bootstrap < 1:
        raise DataError("need at least 1 bootstrap replicate")
    edges = np.linspace(0.0, 1.0, n_bins + 1)
    idx = np.minimum((p * n_bins).astype(np.int64), n_bins - 1)
    rng = rng_for(seed)
    bins = []
    for b in range(n_bins):
        mask = idx == b
        count = int(mask.sum())
        if count == 0:
            bins.append(CalibrationBin(edges[b], edges[b + 1], 0, np.nan, np.nan, np.nan, np.nan))
            continue
        yb = y[mask]
        frac = float(yb.mean())
        resamples = rng.integers(0, count, size=(n_bootstrap, count))
        boot = yb[resamples].mean(axis=1)
        lo, hi = np.percentile(boot, [2.5, 97.5])
        # percentile interval always covers the point estimate
        bins.append(
            CalibrationBin(
                edges[b], edges[b + 1], count, float(p[mask].mean()), frac, min(float(lo), frac), max(float(hi), frac)
            )
        )
    return CalibrationCurve(bins=bins, n_bootstrap=n_bootstrap)


# --- model-evaluation sweeps ---------------------------------------------------

def learning_curve(spec, dataset, sizes, n_bootstrap, validation_fraction, seed):
    """Mean/sd of validation AUC at increasing training sizes.

    The validation set is split off by whole groups and held fixed; each
    replicate bootstraps training groups until the next group would push the
    row count past the target size.
    """
    from . import pipeline  # local import: pipeline depends on this module
    from .learners import ENCODING, fit_classifier
    from .util import derive_seed

    unique_groups = sorted(set(dataset.groups.tolist()))
    rng = rng_for(seed)
    shuffled = [unique_groups[i] for i in rng.permutation(len(unique_groups))]
    n_target = int(round(validation_fraction * dataset.n_rows))
    rows_per_group = {g: 0 for g in unique_groups}
    for g in dataset.groups:
        rows_per_group[g] += 1
    val_groups = set()
    total = 0
    for g in shuffled:
        if total >= n_target:
            break
        val_groups.add(g)
        total += rows_per_group[g]
    train_groups = [g for g in shuffled if g not in val_groups]
    val_mask = np.array([g in val_groups for g in dataset.groups])
    val_rows = np.flatnonzero(val_mask)
    pool_rows_by_group = {g: np.flatnonzero(dataset.groups == g) for g in train_groups}
    pool_size = int(sum(len(v) for v in pool_rows_by_group.values()))

    mode = ENCODING[spec.kind]
    results = []
    for size in sizes:
        if size > pool_size:
            raise DataError(f"requested size {size} exceeds training pool {pool_size}")
        aucs = []
        for rep in range(n_bootstrap):
            rep_rng = rng_for(derive_seed(seed, int(size), rep))
            chosen: list[np.ndarray] = []
            count = 0
            while True:
                g = train_groups[int(rep_rng.integers(0, len(train_groups)))]
                rows = pool_rows_by_group[g]
                if chosen and count + len(rows) > size:
                    break
                chosen.append(rows)
                count += len(rows)
                if count >= size:
                    break
            train_rows = np.concatenate(chosen)
            sub = dataset.take(train_rows)
            fold_schema = sub.schema.refit(sub.raw)
            X_tr = fold_schema.encode(sub.raw, mode)
            X_va = fold_schema.encode(dataset.raw[val_rows], mode)
            y_tr = sub.labels.astype(np.float64)
            if len(np.unique(y_tr)) < 2:
                probs = np.full(len(val_rows), float(y_tr.mean()) if len(y_tr) else 0.5)
            else:
                model = fit_classifier(spec, X_tr, y_tr, derive_seed(seed, int(size), rep, 1))
                probs = model.predict_proba(X_va)
            aucs.append(auc(probs, dataset.labels[val_rows]))
        arr = np.asarray(aucs)
        results.append((int(size), float(arr.mean()), float(arr.std(ddof=1)) if len(arr) > 1 else 0.0))
    return results


@dataclass(frozen=True)
class ImportanceEntry:
    feature: str
    auc_with_all: float
    auc_without: float
    delta: float


@dataclass(frozen=True)
class ImportanceReport:
    entries: list[ImportanceEntry]  # sorted by delta descending, ties alphabetical


def drop_one_importance(spec, dataset, plan, seed) -> ImportanceReport:
    """Rank features by the pooled out-of-fold AUC drop when each is removed.

    Each refit reuses the identical fold plan and seed so the only varying
    input is the feature set.
    """
    from . import pipeline

    if len(dataset.schema.features) < 2:
        raise DataError("importance needs at least 2 features")
    baseline_oof = pipeline.oof_predict([spec], dataset, plan, seed)
    baseline = auc(baseline_oof.probs[:, 0], dataset.labels)
    entries = []
    for feat in dataset.schema.features:
        reduced = dataset.drop_feature(feat.name)
        oof = pipeline.oof_predict([spec], reduced, plan, seed)
        without = auc(oof.probs[:, 0], reduced.labels)
        entries.append(ImportanceEntry(feat.name, baseline, without, baseline - without))
    entries.sort(key=lambda e: (-e.delta, e.feature))
    return ImportanceReport(entries=entries)

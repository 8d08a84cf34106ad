"""Grouped cross-validation, out-of-fold stacking, and model selection.

Rows from one parcel never straddle a fold boundary, and every out-of-fold
probability is produced by a model whose training fold excluded that row's
group.  Encoder statistics (vocabularies, standardization) are refit per fold
on training rows only.
"""
from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import metrics
from .errors import DataError, LeakageError, ModelFormatError
from .features import Dataset, FeatureSchema
from .learners import ClassifierSpec, ENCODING, fit_classifier, model_from_doc, model_to_doc
from .util import derive_seed, rng_for

log = logging.getLogger(__name__)

STACK_FORMAT_VERSION = 1


@dataclass(frozen=True)
class FoldPlan:
    k: int
    assignment: dict  # group key -> fold index
    seed: int

    def fold_of(self, groups: np.ndarray) -> np.ndarray:
        try:
            return np.array([self.assignment[g] for g in groups], dtype=np.int64)
        except KeyError as exc:
            raise DataError(f"group {exc.args[0]!r} not covered by the fold plan") from exc

    def group_counts(self) -> list[int]:
        counts = [0] * self.k
        for f in self.assignment.values():
            counts[f] += 1
        return counts


def grouped_kfold(groups, k: int, seed: int) -> FoldPlan:
    """Shuffle distinct groups with a seeded RNG, then deal them round-robin."""
    if k < 2:
        raise DataError("need at least 2 folds")
    unique = sorted(set(list(groups)))
    if len(unique) < k:
        raise DataError(f"only {len(unique)} distinct groups for k={k}")
    rng = rng_for(seed)
    order = rng.permutation(len(unique))
    assignment = {unique[int(idx)]: pos % k for pos, idx in enumerate(order)}
    return FoldPlan(k=k, assignment=assignment, seed=seed)


@dataclass
class OofMatrix:
    probs: np.ndarray  # (n, m)
    provenance: np.ndarray  # (n, m) fold index that produced each cell
    spec_kinds: list[str]
    warnings: list[str] = field(default_factory=list)


def _fold_encodings(dataset: Dataset, train_idx: np.ndarray, val_idx: np.ndarray, modes: set[str]):
    fold_schema = dataset.schema.refit(dataset.raw[train_idx])
    enc = {}
    for mode in modes:
        enc[mode] = (
            fold_schema.encode(dataset.raw[train_idx], mode),
            fold_schema.encode(dataset.raw[val_idx], mode),
        )
    return enc


def _fit_predict(spec: ClassifierSpec, X_tr, y_tr, X_va, seed: int):
    model = fit_classifier(spec, X_tr, y_tr, seed)
    return model.predict_proba(X_va)


def oof_predict(specs, dataset: Dataset, plan: FoldPlan, seed: int, threads: int = 1) -> OofMatrix:
    """Out-of-fold probabilities for every spec under the given fold plan.

    A fold whose training side is single-class contributes that training
    prior instead of a fitted model (recorded as a warning).
    """
    n = dataset.n_rows
    m = len(specs)
    fold_of_row = plan.fold_of(dataset.groups)
    probs = np.full((n, m), np.nan, dtype=np.float64)
    provenance = np.full((n, m), -1, dtype=np.int64)
    warnings: list[str] = []

    modes = {ENCODING[s.kind] for s in specs}
    tasks = []
    for f in range(plan.k):
        val_idx = np.flatnonzero(fold_of_row == f)
        if val_idx.size == 0:
            continue
        train_idx = np.flatnonzero(fold_of_row != f)
        y_tr = dataset.labels[train_idx].astype(np.float64)
        enc = _fold_encodings(dataset, train_idx, val_idx, modes)
        if len(np.unique(y_tr)) < 2:
            prior = float(y_tr.mean()) if y_tr.size else 0.5
            for j in range(m):
                probs[val_idx, j] = prior
                provenance[val_idx, j] = f
            warnings.append(f"fold {f}: single-class training side; filled with prior {prior:.4f}")
            continue
        for j, spec in enumerate(specs):
            X_tr, X_va = enc[ENCODING[spec.kind]]
            tasks.append((f, j, spec, X_tr, y_tr, X_va, val_idx))

    def run(task):
        f, j, spec, X_tr, y_tr, X_va, val_idx = task
        return f, j, val_idx, _fit_predict(spec, X_tr, y_tr, X_va, derive_seed(seed, f, j))

    if threads > 1 and len(tasks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, tasks))
    else:
        results = [run(t) for t in tasks]
    for f, j, val_idx, p in results:
        probs[val_idx, j] = p
        provenance[val_idx, j] = f

    for w in warnings:
        log.warning("oof: %s", w)
    return OofMatrix(probs=probs, provenance=provenance, spec_kinds=[s.kind for s in specs], warnings=warnings)


def verify_no_leakage(plan: FoldPlan, dataset: Dataset, oof: OofMatrix | None = None) -> None:
    """Internal assertion: group-fold integrity plus OOF provenance."""
    fold_of_row = plan.fold_of(dataset.groups)
    seen: dict[object, int] = {}
    for g, f in zip(dataset.groups, fold_of_row):
        if g in seen and seen[g] != f:
            raise LeakageError(f"group {g!r} appears in folds {seen[g]} and {f}")
        seen[g] = f
    counts = plan.group_counts()
    if max(counts) - min(counts) > 1:
        raise LeakageError(f"unbalanced fold plan: group counts {counts}")
    if oof is not None:
        expected = np.broadcast_to(fold_of_row[:, None], oof.provenance.shape)
        if not np.array_equal(oof.provenance, expected):
            raise LeakageError("out-of-fold cell produced by a model that saw its own group")


@dataclass
class StackedModel:
    """Full-data first-layer models plus the meta learner over their probabilities."""

    specs: list[ClassifierSpec]
    meta_spec: ClassifierSpec
    first_layer: list
    meta: object
    schema: FeatureSchema
    plan_seed: int
    metadata: dict = field(default_factory=dict)

    @property
    def schema_hash(self) -> str:
        return self.schema.hash()

    def first_layer_probs(self, raw: np.ndarray) -> np.ndarray:
        encoded = {mode: self.schema.encode(raw, mode) for mode in {ENCODING[s.kind] for s in self.specs}}
        cols = [model.predict_proba(encoded[ENCODING[spec.kind]]) for spec, model in zip(self.specs, self.first_layer)]
        return np.stack(cols, axis=1)

    def predict_proba(self, raw: np.ndarray) -> np.ndarray:
        return self.meta.predict_proba(self.first_layer_probs(raw))

    def to_doc(self) -> dict:
        return {
            "format_version": STACK_FORMAT_VERSION,
            "schema": self.schema.to_doc(),
            "schema_hash": self.schema_hash,
            "plan_seed": self.plan_seed,
            "specs": [s.to_doc() for s in self.specs],
            "meta_spec": self.meta_spec.to_doc(),
            "first_layer": [model_to_doc(m) for m in self.first_layer],
            "meta": model_to_doc(self.meta),
            "metadata": dict(self.metadata),
        }


def fit_stack(
    dataset: Dataset,
    specs,
    meta: ClassifierSpec,
    plan: FoldPlan,
    seed: int,
    threads: int = 1,
    oof: OofMatrix | None = None,
) -> StackedModel:
    """Meta learner on the out-of-fold matrix; first layer refit on all rows."""
    specs = list(specs)
    if oof is None:
        oof = oof_predict(specs, dataset, plan, seed, threads=threads)
    if oof.probs.shape[1] != len(specs):
        raise DataError("out-of-fold matrix width does not match spec list")
    verify_no_leakage(plan, dataset, oof)

    y = dataset.labels.astype(np.float64)
    meta_model = fit_classifier(meta, oof.probs, y, derive_seed(seed, plan.k, 0))

    full_schema = dataset.schema.refit(dataset.raw)
    encoded = {mode: full_schema.encode(dataset.raw, mode) for mode in {ENCODING[s.kind] for s in specs}}

    def fit_one(j_spec):
        j, spec = j_spec
        return j, fit_classifier(spec, encoded[ENCODING[spec.kind]], y, derive_seed(seed, plan.k + 1, j))

    jobs = list(enumerate(specs))
    if threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            fitted = dict(pool.map(fit_one, jobs))
    else:
        fitted = dict(fit_one(j) for j in jobs)
    first_layer = [fitted[j] for j in range(len(specs))]

    metadata = {
        "first_layer_deployment": "full-data refit",
        "meta_inputs": "out-of-fold probabilities only",
        "categorical_tree_splits": "threshold on ordinal code",
        "numeric_standardization": "onehot mode standardizes numerics (zero mean, unit sd on training rows)",
        "gbt_unstated_defaults": {"learning_rate": 0.1, "l2_lambda": 1.0},
    }
    return StackedModel(
        specs=specs,
        meta_spec=meta,
        first_layer=first_layer,
        meta=meta_model,
        schema=full_schema,
        plan_seed=plan.seed,
        metadata=metadata,
    )


def stack_oof_probs(oof: OofMatrix, dataset: Dataset, meta: ClassifierSpec, plan: FoldPlan, seed: int) -> np.ndarray:
    """Honest out-of-fold probabilities for the stacked model itself.

    The meta learner is re-fit k times over the first-layer OOF columns,
    excluding one fold's groups at a time under the same plan.
    """
    y = dataset.labels.astype(np.float64)
    fold_of_row = plan.fold_of(dataset.groups)
    out = np.full(dataset.n_rows, np.nan)
    for f in range(plan.k):
        val_idx = np.flatnonzero(fold_of_row == f)
        if val_idx.size == 0:
            continue
        train_idx = np.flatnonzero(fold_of_row != f)
        y_tr = y[train_idx]
        if len(np.unique(y_tr)) < 2:
            out[val_idx] = float(y_tr.mean()) if y_tr.size else 0.5
            continue
        meta_model = fit_classifier(meta, oof.probs[train_idx], y_tr, derive_seed(seed, f, len(oof.spec_kinds)))
        out[val_idx] = meta_model.predict_proba(oof.probs[val_idx])
    return out


def predict_stack(model: StackedModel, raw: np.ndarray) -> np.ndarray:
    return model.predict_proba(raw)


# --- cross-validation result summaries ------------------------------------------

@dataclass(frozen=True)
class CvResult:
    spec_kind: str
    fold_logloss: list[float]
    fold_auc: list[float]  # NaN for folds whose validation side is single-class
    logloss_mean: float
    logloss_sd: float
    pooled_auc: float


def cv_results(oof: OofMatrix, dataset: Dataset, plan: FoldPlan) -> list[CvResult]:
    fold_of_row = plan.fold_of(dataset.groups)
    y = dataset.labels.astype(np.float64)
    out = []
    for j, kind in enumerate(oof.spec_kinds):
        fold_ll, fold_auc = [], []
        for f in range(plan.k):
            idx = np.flatnonzero(fold_of_row == f)
            if idx.size == 0:
                continue
            fold_ll.append(metrics.log_loss(oof.probs[idx, j], y[idx]))
            if len(np.unique(y[idx])) < 2:
                fold_auc.append(float("nan"))
            else:
                fold_auc.append(metrics.auc(oof.probs[idx, j], y[idx]))
        ll = np.asarray(fold_ll)
        out.append(
            CvResult(
                spec_kind=kind,
                fold_logloss=[float(v) for v in fold_ll],
                fold_auc=[float(v) for v in fold_auc],
                logloss_mean=float(ll.mean()),
                logloss_sd=float(ll.std(ddof=1)) if len(ll) > 1 else 0.0,
                pooled_auc=metrics.auc(oof.probs[:, j], y),
            )
        )
    return out


def select_hyperparams(grids: dict, dataset: Dataset, plan: FoldPlan, seed: int | None = None, threads: int = 1) -> dict:
    """Pick, per kind, the grid point minimizing mean out-of-fold log loss.

    Ties prefer fewer trees, then stronger regularization, then the
    lexicographically smallest parameter set.
    """
    if seed is None:
        seed = plan.seed
    chosen = {}
    for kind, candidates in grids.items():
        if not candidates:
            raise DataError(f"empty grid for {kind}")
        scored = []
        for c_idx, spec in enumerate(candidates):
            oof = oof_predict([spec], dataset, plan, derive_seed(seed, c_idx) if len(candidates) > 1 else seed, threads=threads)
            result = cv_results(oof, dataset, plan)[0]
            params = spec.resolved()
            tie = (
                result.logloss_mean,
                params.get("trees", 0),
                -float(params.get("l2_lambda", 0.0)),
                -float(params.get("l1_strength", 0.0)),
                sorted((k, str(v)) for k, v in params.items()),
            )
            scored.append((tie, spec))
        scored.sort(key=lambda t: t[0])
        chosen[kind] = scored[0][1]
    return chosen


# --- persistence ------------------------------------------------------------------

def save_stack(model: StackedModel, path) -> None:
    doc = model.to_doc()
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=None, separators=(",", ":")), encoding="utf-8")


def load_stack(path) -> StackedModel:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"cannot read model document: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format_version") != STACK_FORMAT_VERSION:
        raise ModelFormatError("unsupported or missing model format version")
    try:
        schema = FeatureSchema.from_doc(doc["schema"])
        if schema.hash() != doc["schema_hash"]:
            raise ModelFormatError("schema hash mismatch: model document corrupted")
        specs = [ClassifierSpec(s["kind"], s["params"]) for s in doc["specs"]]
        meta_spec_ = ClassifierSpec(doc["meta_spec"]["kind"], doc["meta_spec"]["params"])
        first_layer = [model_from_doc(d) for d in doc["first_layer"]]
        meta_model = model_from_doc(doc["meta"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"malformed model document: {exc}") from exc
    return StackedModel(
        specs=specs,
        meta_spec=meta_spec_,
        first_layer=first_layer,
        meta=meta_model,
        schema=schema,
        plan_seed=int(doc["plan_seed"]),
        metadata=dict(doc.get("metadata", {})),
    )

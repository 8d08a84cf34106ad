"""Command-line interface: generate, train, predict, importance, report.

Configuration comes from an INI-style file of key=value sections; command-line
flags override config scalars.  The seed is mandatory everywhere so every run
is reproducible.  Exit codes: 0 ok, 2 config, 3 internal assertion, 4 data,
5 model compatibility, 6 missing artifacts.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import io
import itertools
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import analysis, metrics, pipeline, synth
from .errors import (
    ConfigError,
    DataError,
    LeakageError,
    MissingArtifactError,
    ModelFormatError,
)
from .features import assemble_dataset, build_schema
from .ingest import load_city, parse_hydrants, parse_parcels, parse_service_lines, assign_hydrants, apply_service_lines
from .learners import ClassifierSpec, KINDS, meta_spec
from .util import fmt_float

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INTERNAL = 3
EXIT_DATA = 4
EXIT_MODEL = 5
EXIT_MISSING = 6

TRAIN_OUTPUTS = ("stacked_model.json", "cv_metrics.csv", "roc.csv", "calibration.csv")
ANALYSIS_OUTPUTS = ("lead_by_sl_type.csv", "lead_by_decade.csv", "sl_type_by_year.csv", "test_locations.csv")
REPORT_REQUIRED = ("cv_metrics.csv", "roc.csv", "calibration.csv")
REPORT_OPTIONAL = ("stacked_model.json", "risk_scores.csv", "risk_map.geojson", "importance.csv") + ANALYSIS_OUTPUTS


@dataclass
class RunConfig:
    seed: int
    out: Path
    folds: int = 5
    threads: int = 1
    threshold: float = 0.1
    bins: int = 10
    bootstrap: int = 200
    data_paths: dict | None = None
    synth_section: dict | None = None
    learner_sections: dict | None = None
    meta_params: dict | None = None


def _parse_value(text: str):
    text = text.strip()
    if text.lower() in ("none", "null"):
        return None
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def _read_config(path: str | None) -> configparser.ConfigParser:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    if path is None:
        return parser
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    try:
        with open(p, encoding="utf-8") as fh:
            parser.read_file(fh)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from exc
    return parser


def _resolve_run_config(args, parser: configparser.ConfigParser) -> RunConfig:
    run = dict(parser["run"]) if parser.has_section("run") else {}

    def pick(flag_value, key, default=None):
        if flag_value is not None:
            return flag_value
        if key in run:
            return _parse_value(run[key])
        return default

    seed = pick(args.seed, "seed")
    if seed is None:
        raise ConfigError("seed is mandatory: pass --seed or set seed in the [run] section")
    out = pick(getattr(args, "out", None), "out", "out")
    cfg = RunConfig(
        seed=int(seed),
        out=Path(out),
        folds=int(pick(getattr(args, "folds", None), "folds", 5)),
        threads=int(pick(getattr(args, "threads", None), "threads", 1)),
        threshold=float(pick(getattr(args, "threshold", None), "threshold", 0.1)),
        bins=int(pick(None, "bins", 10)),
        bootstrap=int(pick(None, "bootstrap", 200)),
    )
    if parser.has_section("data"):
        cfg.data_paths = {k: v for k, v in parser["data"].items()}
    if parser.has_section("synth"):
        cfg.synth_section = {k: _parse_value(v) for k, v in parser["synth"].items()}
    cfg.learner_sections = {
        kind: {k: v for k, v in parser[kind].items()} for kind in KINDS if parser.has_section(kind)
    }
    if parser.has_section("meta"):
        cfg.meta_params = {k: _parse_value(v) for k, v in parser["meta"].items()}
    return cfg


def _grid_for(kind: str, section: dict | None) -> list[ClassifierSpec]:
    """One spec per grid point; comma-separated values expand to a grid."""
    if not section:
        return [ClassifierSpec(kind)]
    keys = list(section)
    value_lists = []
    for key in keys:
        raw = section[key]
        value_lists.append([_parse_value(v) for v in str(raw).split(",")])
    specs = []
    for combo in itertools.product(*value_lists):
        specs.append(ClassifierSpec(kind, dict(zip(keys, combo))))
    return specs


def _build_generator_config(section: dict) -> synth.GeneratorConfig:
    section = dict(section)
    if isinstance(section.get("year_band"), str):
        parts = [p for p in section["year_band"].replace("-", ",").split(",") if p.strip()]
        if len(parts) != 2:
            raise ConfigError(f"year_band must be two years, got {section['year_band']!r}")
        section["year_band"] = (int(parts[0]), int(parts[1]))
    allowed = set(synth.GeneratorConfig.__dataclass_fields__)
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"unknown synth keys: {sorted(unknown)}")
    try:
        return synth.GeneratorConfig(**section)
    except (TypeError, DataError) as exc:
        raise ConfigError(f"bad synth section: {exc}") from exc


def _synth_config(cfg: RunConfig, seed_flag: int | None) -> synth.GeneratorConfig:
    section = dict(cfg.synth_section or {})
    if seed_flag is not None:
        section["seed"] = seed_flag
    if "seed" not in section:
        section["seed"] = cfg.seed
    return _build_generator_config(section)


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([fmt_float(v) if isinstance(v, float) else v for v in row])
    path.write_text(buf.getvalue(), encoding="utf-8")


def _load_training_data(cfg: RunConfig):
    if cfg.data_paths:
        required = ("parcels", "tests", "service_lines", "hydrants")
        missing = [k for k in required if k not in cfg.data_paths]
        if missing:
            raise ConfigError(f"[data] section is missing {missing}")
        for k in required:
            if not Path(cfg.data_paths[k]).exists():
                raise ConfigError(f"data file not found: {cfg.data_paths[k]}")
        return load_city(*(cfg.data_paths[k] for k in required))
    if cfg.synth_section is not None:
        gen = synth.generate(_synth_config(cfg, None), cfg.out / "synth")
        return load_city(gen.parcels_path, gen.tests_path, gen.sl_path, gen.hydrants_path)
    raise ConfigError("config needs a [data] section with the four CSV paths or a [synth] section")


# --- commands ----------------------------------------------------------------

def cmd_synth(args) -> int:
    parser = _read_config(args.config)
    if not parser.has_section("synth"):
        raise ConfigError("config needs a [synth] section")
    run = dict(parser["run"]) if parser.has_section("run") else {}
    out = Path(args.out if args.out is not None else _parse_value(run.get("out", "out")))
    synth_section = {k: _parse_value(v) for k, v in parser["synth"].items()}
    seed = args.seed if args.seed is not None else synth_section.get("seed", _parse_value(run["seed"]) if "seed" in run else None)
    if seed is None:
        raise ConfigError("seed is mandatory: pass --seed or set seed under [synth] or [run]")
    synth_section["seed"] = int(seed)
    gen = synth.generate(_build_generator_config(synth_section), out)
    print(f"wrote {len(gen.paths())} files under {out} ({gen.n_tests} tests)")
    return EXIT_OK


def _cv_metric_rows(result: pipeline.CvResult, oof_col: np.ndarray, labels: np.ndarray) -> list[list]:
    rows = []
    for f, (ll, a) in enumerate(zip(result.fold_logloss, result.fold_auc)):
        rows.append([str(f), result.spec_kind, ll, a])
    rows.append(["mean", result.spec_kind, result.logloss_mean, ""])
    rows.append(["sd", result.spec_kind, result.logloss_sd, ""])
    rows.append(["pooled", result.spec_kind, metrics.log_loss(oof_col, labels), result.pooled_auc])
    return rows


def cmd_train(args) -> int:
    parser = _read_config(args.config)
    cfg = _resolve_run_config(args, parser)
    cfg.out.mkdir(parents=True, exist_ok=True)

    city = _load_training_data(cfg)
    schema = build_schema(city.parcels)
    dataset, excluded = assemble_dataset(city.matched.matched, city.parcels, schema)
    if dataset.n_rows == 0:
        raise DataError("no matched tests to train on")
    if len(np.unique(dataset.labels)) < 2:
        raise DataError("labels are single-class; cannot train a classifier")

    plan = pipeline.grouped_kfold(dataset.groups, cfg.folds, cfg.seed)
    pipeline.verify_no_leakage(plan, dataset)

    grids = {kind: _grid_for(kind, (cfg.learner_sections or {}).get(kind)) for kind in KINDS}
    needs_search = {k: g for k, g in grids.items() if len(g) > 1}
    chosen = {k: g[0] for k, g in grids.items()}
    if needs_search:
        chosen.update(pipeline.select_hyperparams(needs_search, dataset, plan, seed=cfg.seed, threads=cfg.threads))
    specs = [chosen[k] for k in KINDS]
    meta = meta_spec(cfg.meta_params)

    oof = pipeline.oof_predict(specs, dataset, plan, cfg.seed, threads=cfg.threads)
    pipeline.verify_no_leakage(plan, dataset, oof)

    results = pipeline.cv_results(oof, dataset, plan)
    ensemble_probs = pipeline.stack_oof_probs(oof, dataset, meta, plan, cfg.seed)
    ensemble_result = pipeline.cv_results(
        pipeline.OofMatrix(
            probs=ensemble_probs[:, None],
            provenance=plan.fold_of(dataset.groups)[:, None],
            spec_kinds=["ensemble"],
        ),
        dataset,
        plan,
    )[0]

    model = pipeline.fit_stack(dataset, specs, meta, plan, cfg.seed, threads=cfg.threads, oof=oof)
    pipeline.save_stack(model, cfg.out / "stacked_model.json")

    labels = dataset.labels.astype(np.float64)
    rows: list[list] = []
    for j, result in enumerate(results):
        rows.extend(_cv_metric_rows(result, oof.probs[:, j], labels))
    rows.extend(_cv_metric_rows(ensemble_result, ensemble_probs, labels))
    _write_csv(cfg.out / "cv_metrics.csv", ["fold", "spec", "logloss", "auc"], rows)

    roc = metrics.roc_points(ensemble_probs, labels)
    _write_csv(
        cfg.out / "roc.csv",
        ["fpr", "tpr", "threshold"],
        [[f, t, thr] for f, t, thr in zip(roc.fpr.tolist(), roc.tpr.tolist(), roc.thresholds.tolist())],
    )

    calib = metrics.calibration_curve(ensemble_probs, labels, n_bins=cfg.bins, n_bootstrap=cfg.bootstrap, seed=cfg.seed)
    _write_csv(
        cfg.out / "calibration.csv",
        ["bin_lo", "bin_hi", "count", "mean_predicted", "fraction_positive", "ci_low", "ci_high"],
        [[b.lo, b.hi, b.count, b.mean_predicted, b.fraction_positive, b.ci_low, b.ci_high] for b in calib.bins],
    )

    by_sl = analysis.mean_log_lead_by_sl_type(city.matched.matched, city.service_lines, cfg.bootstrap, cfg.seed)
    _write_csv(
        cfg.out / "lead_by_sl_type.csv",
        ["sl_label", "n", "mean_log_lead", "ci_low", "ci_high"],
        [[g.key, g.n, g.mean_log_lead, g.ci_low, g.ci_high] for g in by_sl],
    )
    by_decade = analysis.mean_log_lead_by_decade(city.matched.matched, city.parcels, cfg.bootstrap, cfg.seed)
    _write_csv(
        cfg.out / "lead_by_decade.csv",
        ["decade", "n", "mean_log_lead", "ci_low", "ci_high"],
        [[g.key, g.n, g.mean_log_lead, g.ci_low, g.ci_high] for g in by_decade],
    )
    _write_csv(
        cfg.out / "sl_type_by_year.csv",
        ["year_built", "sl_type"],
        [[str(y), label] for y, label in analysis.sl_type_year_points(city.parcels)],
    )
    _write_csv(
        cfg.out / "test_locations.csv",
        ["latitude", "longitude", "lead_ppb"],
        [[lat, lon, lead] for lat, lon, lead in analysis.test_heatmap_rows(city.matched.matched, city.parcels)],
    )

    print(f"rows={dataset.n_rows} groups={len(set(dataset.groups.tolist()))} "
          f"excluded={excluded} discarded={city.matched.discarded} folds={plan.k}")
    print(f"{'classifier':<16}{'auc':>8}  logloss")
    for result in results + [ensemble_result]:
        print(f"{result.spec_kind:<16}{result.pooled_auc:>8.3f}  {result.logloss_mean:.3f} ± {result.logloss_sd:.3f}")
    return EXIT_OK


def _load_parcels_for_predict(args):
    parcels, _ = parse_parcels(args.parcels)
    if args.service_lines:
        sls, _ = parse_service_lines(args.service_lines)
        parcels = apply_service_lines(parcels, sls)
    if args.hydrants:
        hydrants, _ = parse_hydrants(args.hydrants)
        parcels = assign_hydrants(parcels, hydrants)
    return parcels


def cmd_predict(args) -> int:
    model = pipeline.load_stack(args.model)
    parcels = _load_parcels_for_predict(args)
    threshold = args.threshold if args.threshold is not None else 0.1
    out = Path(args.out if args.out is not None else "out")
    out.mkdir(parents=True, exist_ok=True)

    rmap = analysis.risk_map(model, parcels, threshold=threshold)
    _write_csv(
        out / "risk_scores.csv",
        ["pid", "latitude", "longitude", "probability"],
        [[pid, lat if lat is not None else "", lon if lon is not None else "", p] for pid, lat, lon, p in rmap.entries],
    )
    geo = analysis.risk_geojson(rmap)
    (out / "risk_map.geojson").write_text(json.dumps(geo, sort_keys=True, indent=1), encoding="utf-8")
    print(f"scored {len(rmap.entries)} parcels; {len(geo['features'])} above threshold {threshold}; "
          f"{rmap.missing_coordinates} without coordinates")
    return EXIT_OK


def cmd_importance(args) -> int:
    parser = _read_config(args.config)
    cfg = _resolve_run_config(args, parser)
    cfg.out.mkdir(parents=True, exist_ok=True)

    city = _load_training_data(cfg)
    schema = build_schema(city.parcels)
    dataset, _ = assemble_dataset(city.matched.matched, city.parcels, schema)
    if dataset.n_rows == 0 or len(np.unique(dataset.labels)) < 2:
        raise DataError("importance needs trainable two-class data")
    plan = pipeline.grouped_kfold(dataset.groups, cfg.folds, cfg.seed)
    spec = _grid_for("gbt", (cfg.learner_sections or {}).get("gbt"))[0]
    report = metrics.drop_one_importance(spec, dataset, plan, cfg.seed)
    _write_csv(
        cfg.out / "importance.csv",
        ["rank", "feature", "auc_drop"],
        [[str(i + 1), e.feature, e.delta] for i, e in enumerate(report.entries)],
    )
    print(f"wrote importance for {len(report.entries)} features to {cfg.out / 'importance.csv'}")
    return EXIT_OK


def _markdown_table(path: Path, max_rows: int | None = None) -> str:
    with open(path, encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        return "(empty)\n"
    header, body = rows[0], rows[1:]
    if max_rows is not None:
        body = body[:max_rows]
    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    for row in body:
        lines.append("| " + " | ".join(row) + " |")
    return "\n".join(lines) + "\n"


def cmd_report(args) -> int:
    results_dir = Path(args.out if args.out is not None else "out")
    missing = [name for name in REPORT_REQUIRED if not (results_dir / name).exists()]
    if missing:
        raise MissingArtifactError(f"missing required result files in {results_dir}: {missing}")

    parts = ["# Lead risk run report", ""]
    parts.append("## Cross-validated metrics")
    with open(results_dir / "cv_metrics.csv", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    summary = [rows[0]] + [r for r in rows[1:] if r and r[0] in ("mean", "sd", "pooled")]
    lines = ["| " + " | ".join(summary[0]) + " |", "|" + "---|" * len(summary[0])]
    for row in summary[1:]:
        lines.append("| " + " | ".join(row) + " |")
    parts.append("\n".join(lines) + "\n")

    parts.append("## Calibration (out-of-fold ensemble)")
    parts.append(_markdown_table(results_dir / "calibration.csv"))
    parts.append("## ROC data")
    parts.append(f"Full curve in `roc.csv` ({sum(1 for _ in open(results_dir / 'roc.csv')) - 1} points).\n")

    if (results_dir / "importance.csv").exists():
        parts.append("## Drop-one feature importance")
        parts.append(_markdown_table(results_dir / "importance.csv", max_rows=10))

    pointers = {
        "test_locations.csv": "test locations with lead readings (heat-map source)",
        "lead_by_sl_type.csv": "mean log lead by service-line record label",
        "lead_by_decade.csv": "mean log lead by construction decade",
        "sl_type_by_year.csv": "service-line label vs construction year scatter",
        "risk_scores.csv": "per-parcel predicted probabilities",
        "risk_map.geojson": "parcels above the display threshold",
    }
    available = [(name, desc) for name, desc in pointers.items() if (results_dir / name).exists()]
    if available:
        parts.append("## Data pointers")
        for name, desc in available:
            parts.append(f"- `{name}`: {desc}")
        parts.append("")

    (results_dir / "report.md").write_text("\n".join(parts), encoding="utf-8")
    print(f"wrote {results_dir / 'report.md'}")
    return EXIT_OK


# --- argument parsing -----------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="leadrisk", description="Water-lead risk assessment toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, threshold=False, model=False):
        p.add_argument("--config", default=None, help="INI config path")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--threads", type=int, default=None)
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--folds", type=int, default=None)
        if threshold:
            p.add_argument("--threshold", type=float, default=None)
        if model:
            p.add_argument("--model", required=True)
            p.add_argument("--parcels", required=True)
            p.add_argument("--service-lines", dest="service_lines", default=None)
            p.add_argument("--hydrants", default=None)

    common(sub.add_parser("synth", help="generate a synthetic city"))
    common(sub.add_parser("train", help="train the stacked ensemble with grouped CV"), threshold=True)
    common(sub.add_parser("predict", help="score parcels with a trained model"), threshold=True, model=True)
    common(sub.add_parser("importance", help="drop-one feature importance"))
    common(sub.add_parser("report", help="assemble a markdown report from results"))
    return parser


_COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "predict": cmd_predict,
    "importance": cmd_importance,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except LeakageError as exc:
        print(f"internal assertion failed: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ModelFormatError as exc:
        print(f"model error: {exc}", file=sys.stderr)
        return EXIT_MODEL
    except MissingArtifactError as exc:
        print(f"missing artifacts: {exc}", file=sys.stderr)
        return EXIT_MISSING


def entrypoint() -> None:
    sys.exit(main())

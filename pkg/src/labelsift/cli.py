"""Command-line entry point wiring all stages into reproducible workflows.

Every artifact-producing subcommand writes a run_manifest.json next to its
outputs recording the command, config snapshot, seeds, paths, and duration, so
any run can be reproduced from the manifest alone. Commands never mutate their
inputs. The LABELSIFT_OUT_ROOT environment variable sets the default output
root when --out is omitted.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .classifier import LossLedger, TrainingConfig, train
from .dataset import (SyntheticConfig, generate_synthetic_corpus, load_manifest,
                      write_cleaned_splits, write_manifest)
from .errors import ConfigError, LabelSiftError
from .evaluation import (detection_report, detection_table_text, metrics_table_text,
                         train_eval, write_metrics_json, write_projection_csv)
from .gmm import write_density_csv, write_model_json
from .injection import InjectionReport, compute_uncertainty_scores, inject_noise
from .pipeline import CleaningPlan, PipelineConfig, run_pipeline, stage_seed
from .review import serve


def _out_dir(args, command: str) -> Path:
    if args.out:
        return Path(args.out)
    root = os.environ.get("LABELSIFT_OUT_ROOT", "out")
    return Path(root) / command


def _write_run_manifest(out_dir: Path, command: str, config: dict, seeds: dict,
                        inputs: dict, outputs: dict, started: float) -> None:
    manifest = {
        "command": command,
        "config": config,
        "seeds": seeds,
        "inputs": {k: str(v) for k, v in inputs.items()},
        "outputs": {k: str(v) for k, v in outputs.items()},
        "tool_version": __version__,
        "duration_seconds": round(time.monotonic() - started, 3),
    }
    (out_dir / "run_manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


def _load_json_config(path: str | None) -> dict:
    if not path:
        return {}
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path}: {exc}") from exc


def _training_config(cfg_dict: dict, seed: int | None) -> TrainingConfig:
    t = dict(cfg_dict.get("training", {}))
    if t.get("focal_alpha") is not None:
        t["focal_alpha"] = tuple(t["focal_alpha"])
    if t.get("hidden_widths") is not None:
        t["hidden_widths"] = tuple(t["hidden_widths"])
    try:
        cfg = TrainingConfig(**t)
    except TypeError as exc:
        raise ConfigError(f"bad training config: {exc}") from exc
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    return cfg


def _parse_counts(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in text.split(","))
    except ValueError as exc:
        raise ConfigError(f"bad count list {text!r}") from exc


def cmd_gen(args) -> int:
    started = time.monotonic()
    out = _out_dir(args, "gen")
    out.mkdir(parents=True, exist_ok=True)
    cfg_dict = _load_json_config(args.config)
    cfg = SyntheticConfig(
        n_per_class=_parse_counts(args.n_per_class),
        d=args.dim, class_separation=args.separation,
        ambiguous_fraction=args.ambiguous, seed=args.seed,
        n_test_per_class=_parse_counts(args.test_per_class) if args.test_per_class else None,
        **cfg_dict.get("synthetic", {}))
    ds = generate_synthetic_corpus(cfg)
    path = write_manifest(ds, out / "manifest.csv",
                          provenance=f"synthetic corpus seed={cfg.seed}")
    _write_run_manifest(out, "gen", {"synthetic": {
        "n_per_class": list(cfg.n_per_class), "d": cfg.d,
        "class_separation": cfg.class_separation, "ambiguous_fraction": cfg.ambiguous_fraction,
        "n_test_per_class": list(cfg.n_test_per_class) if cfg.n_test_per_class else None,
    }}, {"seed": cfg.seed}, {}, {"manifest": path}, started)
    print(f"wrote {path} ({len(ds.records)} records, {ds.num_classes} classes)")
    return 0


def cmd_inject(args) -> int:
    started = time.monotonic()
    out = _out_dir(args, "inject")
    out.mkdir(parents=True, exist_ok=True)
    ds = load_manifest(args.manifest)
    cfg_dict = _load_json_config(args.config)
    training = _training_config(cfg_dict, args.seed)

    fragments = [train(ds, training, run_index)[1] for run_index in range(args.runs)]
    ledger = LossLedger.merged(fragments)
    scores = compute_uncertainty_scores(ledger)
    noisy, report = inject_noise(ds, args.rate, scores, seed=args.seed)
    manifest_path = write_manifest(noisy, out / "manifest.csv",
                                   provenance=f"noise-injected rate={args.rate} seed={args.seed}")
    report.write(out / "injection.json", out / "flips.csv")
    _write_run_manifest(out, "inject",
                        {"rate": args.rate, "runs": args.runs,
                         "training": PipelineConfig(training=training).to_dict()["training"]},
                        {"seed": args.seed}, {"manifest": args.manifest},
                        {"manifest": manifest_path, "injection": out / "injection.json",
                         "flips": out / "flips.csv"}, started)
    print(f"flipped {len(report.flipped)} of {len(ds.split_records('dev'))} dev samples")
    return 0


def cmd_detect(args) -> int:
    started = time.monotonic()
    out = _out_dir(args, "detect")
    out.mkdir(parents=True, exist_ok=True)
    ds = load_manifest(args.manifest)
    cfg_dict = _load_json_config(args.config)
    cfg = PipelineConfig.from_dict(cfg_dict) if cfg_dict else PipelineConfig()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.k_c is not None:
        cfg = replace(cfg, k_c=args.k_c)
    if args.k_f is not None:
        cfg = replace(cfg, k_f=args.k_f)
    if args.runs is not None:
        cfg = replace(cfg, runs_per_stage=args.runs)

    plan = run_pipeline(ds, cfg, diagnostics_dir=out / "diagnostics")
    paths = plan.write(out)
    for record in plan.stages:
        paths[f"gmm_stage{record.stage}"] = write_model_json(
            record.gmm_model, record.roles, out / f"gmm_stage{record.stage}.json")
    _write_run_manifest(out, "detect", cfg.to_dict(),
                        {"seed": cfg.seed,
                         "stage_seeds": [stage_seed(cfg.seed, 1), stage_seed(cfg.seed, 2)]},
                        {"manifest": args.manifest}, paths, started)
    print(f"plan: {plan.k_c} corrections, {plan.k_f} filters -> {paths['plan']}")
    return 0


def cmd_clean(args) -> int:
    started = time.monotonic()
    out = _out_dir(args, "clean")
    ds = load_manifest(args.manifest)
    plan = CleaningPlan.from_json(args.plan)
    paths = write_cleaned_splits(ds, plan, out, anomaly_label=args.anomaly_class)
    _write_run_manifest(out, "clean", {"anomaly_class": args.anomaly_class}, {},
                        {"manifest": args.manifest, "plan": args.plan}, paths, started)
    print(f"wrote {paths['corrected']}, {paths['filtered']}, {paths['relabel']}")
    return 0


def cmd_train_eval(args) -> int:
    started = time.monotonic()
    out = _out_dir(args, "train-eval")
    out.mkdir(parents=True, exist_ok=True)
    ds = load_manifest(args.manifest)
    cfg_dict = _load_json_config(args.config)
    training = _training_config(cfg_dict, args.seed)
    positive = args.positive_class if args.positive_class is not None else ds.minority_class()
    metrics = train_eval(ds, training, positive)
    name = args.label or Path(args.manifest).stem
    json_path = write_metrics_json(metrics, out / "metrics.json")
    (out / "metrics.txt").write_text(metrics_table_text([(name, metrics)]))
    _write_run_manifest(out, "train-eval",
                        {"training": PipelineConfig(training=training).to_dict()["training"],
                         "positive_class": positive, "label": name},
                        {"seed": training.seed}, {"manifest": args.manifest},
                        {"metrics": json_path, "table": out / "metrics.txt"}, started)
    print((out / "metrics.txt").read_text().rstrip())
    return 0


def cmd_report(args) -> int:
    started = time.monotonic()
    out = _out_dir(args, "report")
    out.mkdir(parents=True, exist_ok=True)
    ds = load_manifest(args.manifest)
    plan = CleaningPlan.from_json(args.plan)
    outputs: dict[str, Path] = {}

    losses1 = [a.aggregated_loss for a in plan.assessments_stage1]
    losses2 = [a.aggregated_loss for a in plan.assessments_stage2]
    for record, losses in zip(plan.stages, (losses1, losses2)):
        outputs[f"density_stage{record.stage}"] = write_density_csv(
            record.gmm_model, losses, out / f"density_stage{record.stage}.csv")

    outputs["projection"] = write_projection_csv(ds, plan, out / "projection.csv")

    if args.injection:
        injection = InjectionReport.from_json(args.injection)
        det = detection_report(plan, injection)
        (out / "detection.json").write_text(json.dumps(det.to_dict(), indent=2) + "\n")
        rate_label = f"{injection.rate * 100:g}%"
        (out / "table_detection.txt").write_text(detection_table_text({rate_label: det}))
        outputs["detection"] = out / "detection.json"
        outputs["table_detection"] = out / "table_detection.txt"

    if args.metrics:
        rows = []
        for spec_str in args.metrics:
            name, _, path = spec_str.partition("=")
            if not path:
                raise ConfigError(f"--metrics expects name=path, got {spec_str!r}")
            d = json.loads(Path(path).read_text())
            from .evaluation import ClassificationMetrics
            rows.append((name, ClassificationMetrics(
                d["accuracy"], d["f1"], d["precision"], d["sensitivity"], d["avg_max_confidence"])))
        (out / "table_metrics.txt").write_text(metrics_table_text(rows))
        outputs["table_metrics"] = out / "table_metrics.txt"

    _write_run_manifest(out, "report", {}, {},
                        {"manifest": args.manifest, "plan": args.plan,
                         "injection": args.injection or ""}, outputs, started)
    print("report written to", out)
    return 0


def cmd_review(args) -> int:
    ds = load_manifest(args.manifest)
    plan = CleaningPlan.from_json(args.plan)
    kwargs = {}
    if args.pool_size is not None:
        kwargs["pool_size"] = args.pool_size
    if args.set_size is not None:
        kwargs["set_size"] = args.set_size
        if args.set_size != 100:
            mix_anomaly = round(args.set_size * 0.3)
            kwargs["class_mix"] = {"normal": args.set_size - mix_anomaly, "anomaly": mix_anomaly}
    if args.max_per_group is not None:
        kwargs["max_per_group"] = args.max_per_group
    if args.min_frame_gap is not None:
        kwargs["min_frame_gap"] = args.min_frame_gap
    if args.anomaly_class is not None:
        kwargs["anomaly_label"] = args.anomaly_class
    serve(plan, ds, bind_address=args.bind, log_path=args.log,
          static_dir=args.static_dir, **kwargs)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="labelsift",
                                     description="Detect, correct, and filter mislabeled samples.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic corpus manifest")
    p.add_argument("--out")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config")
    p.add_argument("--n-per-class", default="900,100")
    p.add_argument("--test-per-class", default=None)
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--separation", type=float, default=4.0)
    p.add_argument("--ambiguous", type=float, default=0.1)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("inject", help="inject uncertainty-targeted label noise")
    p.add_argument("--manifest", required=True)
    p.add_argument("--noise-rate", dest="rate", type=float, required=True)
    p.add_argument("--runs", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config")
    p.add_argument("--out")
    p.set_defaults(func=cmd_inject)

    p = sub.add_parser("detect", help="run the correct-then-filter pipeline")
    p.add_argument("--manifest", required=True)
    p.add_argument("--config")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--k-c", type=int, default=None)
    p.add_argument("--k-f", type=int, default=None)
    p.add_argument("--runs", type=int, default=None)
    p.add_argument("--out")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("clean", help="emit corrected/filtered/relabel files from a plan")
    p.add_argument("--manifest", required=True)
    p.add_argument("--plan", required=True)
    p.add_argument("--anomaly-class", type=int, default=None)
    p.add_argument("--out")
    p.set_defaults(func=cmd_clean)

    p = sub.add_parser("train-eval", help="train on a manifest and score the test split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--config")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--positive-class", type=int, default=None)
    p.add_argument("--label")
    p.add_argument("--out")
    p.set_defaults(func=cmd_train_eval)

    p = sub.add_parser("report", help="emit detection/metrics tables, densities, projection")
    p.add_argument("--manifest", required=True)
    p.add_argument("--plan", required=True)
    p.add_argument("--injection")
    p.add_argument("--metrics", action="append",
                   help="name=metrics.json row for the metrics table (repeatable)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("review", help="serve the review API and UI")
    p.add_argument("--manifest", required=True)
    p.add_argument("--plan", required=True)
    p.add_argument("--bind", default="127.0.0.1:8000")
    p.add_argument("--log", default="adjudications.jsonl")
    p.add_argument("--static-dir", default=None)
    p.add_argument("--pool-size", type=int, default=None)
    p.add_argument("--set-size", type=int, default=None)
    p.add_argument("--max-per-group", type=int, default=None)
    p.add_argument("--min-frame-gap", type=int, default=None)
    p.add_argument("--anomaly-class", type=int, default=None)
    p.set_defaults(func=cmd_review)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except LabelSiftError as exc:
        print(f"error:{exc.category}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

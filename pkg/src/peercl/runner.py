"""Multi-seed orchestration: run each seed, write artifacts, summarize."""

from __future__ import annotations

import dataclasses
import json
import os
import time
from pathlib import Path

import numpy as np

from .config import RunConfig, save_config
from .training import ExperimentResult, TrainingAborted, run_experiment

ARTIFACT_ROOT_ENV = "PEERCL_RUN_ROOT"

SUMMARY_METRICS = ("AA", "LA", "RF", "FM")


def resolve_out_dir(cfg: RunConfig, out: str | None) -> Path:
    """Explicit --out wins; otherwise <root>/<timestamp>-<mode> where the
    root comes from the environment or defaults to ./runs."""
    if out:
        return Path(out)
    root = Path(os.environ.get(ARTIFACT_ROOT_ENV, "runs"))
    stamp = time.strftime("%Y%m%d-%H%M%S")
    return root / f"{stamp}-{cfg.mode}"


def _matrix_filename(key: str) -> str:
    return "accuracy_matrix.csv" if key == "primary" else f"accuracy_matrix_{key}.csv"


def write_seed_artifacts(result: ExperimentResult, cfg: RunConfig, seed_dir: Path) -> None:
    seed_dir.mkdir(parents=True, exist_ok=True)
    for key, matrix in result.matrices.items():
        name = "accuracy_matrix.csv" if key == result.primary else f"accuracy_matrix_{key}.csv"
        matrix.to_csv(seed_dir / name)
    report = {
        "seed": result.seed,
        "mode": result.mode,
        "primary": result.primary,
        "class_groups": result.class_groups,
        "stream_consumed": result.stream_consumed,
        "metrics": result.reports,
    }
    with open(seed_dir / "report.json", "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    if cfg.diagnostics.step_records:
        with open(seed_dir / "steps.jsonl", "w", encoding="utf-8") as fh:
            for rec in result.records:
                fh.write(json.dumps(dataclasses.asdict(rec)) + "\n")
    if result.probe is not None:
        with open(seed_dir / "loss_probe.jsonl", "w", encoding="utf-8") as fh:
            for row in result.probe:
                fh.write(json.dumps(row) + "\n")
    if result.entropy is not None:
        with open(seed_dir / "entropy.json", "w", encoding="utf-8") as fh:
            json.dump(result.entropy, fh, indent=2, sort_keys=True)
            fh.write("\n")
    if result.ncm is not None:
        with open(seed_dir / "ncm.json", "w", encoding="utf-8") as fh:
            json.dump({"ncm_accuracy": result.ncm}, fh, indent=2)
            fh.write("\n")


def _mean_std(values: list[float]) -> dict:
    arr = np.asarray(values, dtype=np.float64)
    return {
        "mean": float(arr.mean()),
        "std": float(arr.std(ddof=1)) if len(arr) > 1 else None,
        "per_seed": values,
    }


def summarize(results: list[ExperimentResult]) -> dict:
    """Cross-seed mean and sample (n-1) standard deviation per metric."""
    keys = results[0].reports.keys()
    summary: dict = {
        "mode": results[0].mode,
        "seeds": [r.seed for r in results],
        "std_definition": "sample standard deviation (n-1 denominator)",
        "metrics": {},
    }
    for key in keys:
        per_metric = {}
        for metric in SUMMARY_METRICS:
            values = [r.reports[key][metric] for r in results]
            if any(v is None for v in values):
                per_metric[metric] = None
            else:
                per_metric[metric] = _mean_std([float(v) for v in values])
        summary["metrics"][key] = per_metric
    if all(r.entropy is not None for r in results):
        stages = results[0].entropy.keys()
        summary["entropy"] = {s: _mean_std([r.entropy[s] for r in results]) for s in stages}
    return summary


def run_all(cfg: RunConfig, out_dir: Path) -> dict:
    """Run every configured seed, writing per-seed artifacts as they finish;
    partial artifacts survive an abort."""
    cfg.validate()
    out_dir.mkdir(parents=True, exist_ok=True)
    save_config(cfg, out_dir / "config.json")
    results: list[ExperimentResult] = []
    try:
        for seed in cfg.seeds:
            result = run_experiment(cfg, seed)
            write_seed_artifacts(result, cfg, out_dir / f"seed{seed}")
            results.append(result)
    except TrainingAborted as exc:
        with open(out_dir / "abort.json", "w", encoding="utf-8") as fh:
            json.dump({"error": str(exc), "record": dataclasses.asdict(exc.record)}, fh, indent=2)
            fh.write("\n")
        raise
    summary = summarize(results)
    with open(out_dir / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return summary

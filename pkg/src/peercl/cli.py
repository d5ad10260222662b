"""Command-line front end: run experiments, score matrices, check gradients,
and generate IDX datasets."""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from .config import RunConfig, load_config
from .data import SyntheticSpec, gen_synthetic, write_idx
from .errors import ConfigError, IdxParseError
from .gradcheck import run_all as run_gradchecks
from .metrics import AccuracyMatrix, metric_report
from .runner import resolve_out_dir, run_all
from .training import TrainingAborted


def _parse_seeds(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(s) for s in text.split(",") if s.strip())
    except ValueError as exc:
        raise ConfigError(f"seeds must be a comma-separated integer list, got {text!r}") from exc


def _apply_overrides(cfg: RunConfig, args: argparse.Namespace) -> RunConfig:
    if args.mode is not None:
        cfg.mode = args.mode
    if args.seeds is not None:
        cfg.seeds = _parse_seeds(args.seeds)
    if args.scheme is not None:
        cfg.scheme = args.scheme
    if args.aug_strategy is not None:
        cfg.aug_strategy = args.aug_strategy
    if args.eval_mode is not None:
        cfg.eval_mode = args.eval_mode
    if args.tasks is not None:
        cfg.n_tasks = args.tasks
    if args.memory_size is not None:
        cfg.memory_size = args.memory_size
    if args.stream_batch is not None:
        cfg.stream_batch = args.stream_batch
    if args.memory_batch is not None:
        cfg.memory_batch = args.memory_batch
    if args.lam1 is not None:
        cfg.weights.lam_cls = args.lam1
    if args.lam2 is not None:
        cfg.weights.lam_distill = args.lam2
    if args.tau is not None:
        cfg.weights.temperature = args.tau
    if args.n_stages is not None:
        cfg.chain = dataclasses.replace(cfg.chain, n_stages=args.n_stages)
    if args.ra_n is not None or args.ra_m is not None:
        policy = cfg.chain.policy
        policy = dataclasses.replace(
            policy,
            n_ops=args.ra_n if args.ra_n is not None else policy.n_ops,
            magnitude=args.ra_m if args.ra_m is not None else policy.magnitude,
        )
        cfg.chain = dataclasses.replace(cfg.chain, policy=policy)
    if args.probe:
        cfg.diagnostics.loss_probe = True
    if args.entropy:
        cfg.diagnostics.entropy = True
    if args.ncm:
        cfg.diagnostics.ncm = True
    if args.step_records:
        cfg.diagnostics.step_records = True
    return cfg


def _cmd_run(args: argparse.Namespace) -> int:
    try:
        cfg = load_config(args.config) if args.config else RunConfig()
        cfg = _apply_overrides(cfg, args)
        cfg.validate()
    except (ConfigError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    out_dir = resolve_out_dir(cfg, args.out)
    try:
        summary = run_all(cfg, out_dir)
    except TrainingAborted as exc:
        print(f"aborted: {exc} (partial artifacts in {out_dir})", file=sys.stderr)
        return 1
    print(f"wrote artifacts to {out_dir}")
    for key, metrics in summary["metrics"].items():
        aa = metrics["AA"]
        std = aa["std"]
        spread = f" +/- {std * 100:.2f}" if std is not None else ""
        print(f"  {key}: AA {aa['mean'] * 100:.2f}%{spread}")
    return 0


def _cmd_metrics(args: argparse.Namespace) -> int:
    try:
        matrix = AccuracyMatrix.from_csv(args.matrix)
    except (ValueError, FileNotFoundError) as exc:
        print(f"matrix error: {exc}", file=sys.stderr)
        return 2
    json.dump(metric_report(matrix), sys.stdout, indent=2, sort_keys=True)
    print()
    return 0


def _cmd_gradcheck(args: argparse.Namespace) -> int:
    results = run_gradchecks(n_instances=args.instances, seed=args.seed)
    failed = 0
    for res in results:
        status = "PASS" if res.passed else "FAIL"
        detail = f" ({res.detail})" if res.detail else ""
        print(f"{status} {res.name}: max rel err {res.max_rel_err:.3e} over {res.instances} instances{detail}")
        failed += 0 if res.passed else 1
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return 0 if failed == 0 else 1


def _cmd_gen_data(args: argparse.Namespace) -> int:
    try:
        spec = SyntheticSpec(
            n_classes=args.classes,
            train_per_class=args.train_per_class,
            test_per_class=args.test_per_class,
            height=args.height,
            width=args.width,
            noise=args.noise,
            seed=args.seed,
        )
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    train, test = gen_synthetic(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_idx(train, out / "train-images.idx", out / "train-labels.idx")
    write_idx(test, out / "test-images.idx", out / "test-labels.idx")
    print(f"wrote {len(train)} train / {len(test)} test examples to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="peercl", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run a configured experiment over its seeds")
    run_p.add_argument("--config", help="JSON run configuration (defaults apply when omitted)")
    run_p.add_argument("--out", help="artifact directory (default <root>/<timestamp>-<mode>)")
    run_p.add_argument("--mode", choices=[
        "er_baseline", "er_untrained_distill", "er_multiview", "ccl_only", "ccl_dc", "sdc"])
    run_p.add_argument("--seeds", help="comma-separated seed list, e.g. 1,2,3")
    run_p.add_argument("--scheme", choices=["hard_to_easy", "easy_to_hard", "same_difficulty"])
    run_p.add_argument("--aug-strategy", dest="aug_strategy", choices=["partial", "full"])
    run_p.add_argument("--eval-mode", dest="eval_mode", choices=["independent", "ensemble", "both"])
    run_p.add_argument("--tasks", type=int)
    run_p.add_argument("--memory-size", dest="memory_size", type=int)
    run_p.add_argument("--stream-batch", dest="stream_batch", type=int)
    run_p.add_argument("--memory-batch", dest="memory_batch", type=int)
    run_p.add_argument("--lam1", type=float, help="classification weight")
    run_p.add_argument("--lam2", type=float, help="distillation weight")
    run_p.add_argument("--tau", type=float, help="distillation temperature")
    run_p.add_argument("--n-stages", dest="n_stages", type=int)
    run_p.add_argument("--ra-n", dest="ra_n", type=int, help="random ops per augmentation stage")
    run_p.add_argument("--ra-m", dest="ra_m", type=int, help="augmentation magnitude (0-30)")
    run_p.add_argument("--probe", action="store_true", help="record the loss-curve probe")
    run_p.add_argument("--entropy", action="store_true", help="record prediction entropy per chain stage")
    run_p.add_argument("--ncm", action="store_true", help="record nearest-class-mean accuracy")
    run_p.add_argument("--step-records", dest="step_records", action="store_true")
    run_p.set_defaults(func=_cmd_run)

    metrics_p = sub.add_parser("metrics", help="score an accuracy-matrix CSV")
    metrics_p.add_argument("matrix", help="path to the accuracy-matrix CSV")
    metrics_p.set_defaults(func=_cmd_metrics)

    grad_p = sub.add_parser("gradcheck", help="finite-difference check of all ops and losses")
    grad_p.add_argument("--instances", type=int, default=20)
    grad_p.add_argument("--seed", type=int, default=0)
    grad_p.set_defaults(func=_cmd_gradcheck)

    gen_p = sub.add_parser("gen-data", help="write a synthetic dataset as IDX files")
    gen_p.add_argument("--out", required=True)
    gen_p.add_argument("--classes", type=int, default=10)
    gen_p.add_argument("--train-per-class", dest="train_per_class", type=int, default=500)
    gen_p.add_argument("--test-per-class", dest="test_per_class", type=int, default=100)
    gen_p.add_argument("--height", type=int, default=12)
    gen_p.add_argument("--width", type=int, default=12)
    gen_p.add_argument("--noise", type=float, default=0.15)
    gen_p.add_argument("--seed", type=int, default=0)
    gen_p.set_defaults(func=_cmd_gen_data)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())

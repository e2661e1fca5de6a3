"""Command-line orchestration.

Subcommands: synth, folds, train, eval, ablate, gradflow, report, benchmark.
Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
The environment variable SITSFUSE_OUT sets the default output root.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .analysis import flow_recorder, robustness_curve
from .data.folds import make_folds
from .data.io import MANIFEST_NAME, load_manifest
from .data.tns import TensorFormatError
from .data.types import ValidationError
from .experiment import CONFIG_NAME, ExperimentConfig, build_model_from, ensure_dataset, load_run, run_train
from .fusion import ConfigurationError, FusionConfig
from .metrics import MetricError
from .models import parameter_count
from .report import report_emit
from .synthgen import generate_dataset
from .tasks import TrainingError, evaluate, save_checkpoint, train


def out_root() -> Path:
    return Path(os.environ.get("SITSFUSE_OUT", "."))


def _resolve_out(arg: str | None, default_name: str) -> Path:
    if arg is not None:
        return Path(arg)
    return out_root() / default_name


def _load_config(args: argparse.Namespace) -> ExperimentConfig:
    config = ExperimentConfig.load(args.config)
    return _apply_overrides(config, args)


def _apply_overrides(config: ExperimentConfig, args: argparse.Namespace) -> ExperimentConfig:
    """CLI flags win over the config file."""
    train_updates = {}
    fusion_updates = {}
    if getattr(args, "seed", None) is not None:
        config = dataclasses.replace(config, seed=args.seed)
        train_updates["seed"] = args.seed
        if config.synth is not None:
            config = dataclasses.replace(config, synth=dataclasses.replace(config.synth, seed=args.seed))
    for name in ("task", "epochs", "optimizer", "lr", "batch_size", "eval_every"):
        value = getattr(args, name, None)
        if value is not None:
            train_updates[name] = value
    if getattr(args, "scheme", None) is not None:
        fusion_updates["scheme"] = args.scheme
    if getattr(args, "modality", None) is not None:
        fusion_updates["single_modality"] = args.modality
    if getattr(args, "aux", None) is not None:
        fusion_updates["aux_enabled"] = args.aux == "on"
    if getattr(args, "dropout", None) is not None:
        fusion_updates["dropout"] = tuple(float(p) for p in args.dropout.split(","))
    if getattr(args, "dataset", None) is not None:
        config = dataclasses.replace(config, dataset_path=args.dataset)
    if train_updates:
        config = dataclasses.replace(config, train=dataclasses.replace(config.train, **train_updates))
    if fusion_updates:
        config = dataclasses.replace(config, fusion=dataclasses.replace(config.fusion, **fusion_updates))
    return config


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_synth(args: argparse.Namespace) -> int:
    config = _load_config(args)
    if config.synth is None:
        raise ConfigurationError("config has no synth section to generate from")
    out = Path(args.out) if args.out else (Path(config.dataset_path) if config.dataset_path else None)
    if out is None:
        raise ConfigurationError("no output directory: pass --out or set dataset_path")
    if (out / MANIFEST_NAME).exists() and not args.force:
        raise ConfigurationError(f"dataset already exists at {out}; pass --force to regenerate")
    generate_dataset(config.synth, out)
    digest = hashlib.sha256((out / MANIFEST_NAME).read_bytes()).hexdigest()
    print(f"dataset written to {out} ({config.synth.n_patches} patches), manifest sha256 {digest}")
    return 0


def cmd_folds(args: argparse.Namespace) -> int:
    manifest = load_manifest(args.dataset)
    folds = manifest.folds
    if args.n_folds is not None:
        folds = make_folds(manifest.patch_ids, n_folds=args.n_folds, seed=args.seed or 0)
    print(json.dumps(folds, indent=2, sort_keys=True))
    counts: dict[int, int] = {}
    for fold in folds.values():
        counts[fold] = counts.get(fold, 0) + 1
    print("fold sizes: " + ", ".join(f"{k}: {v}" for k, v in sorted(counts.items())), file=sys.stderr)
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    config = _load_config(args)
    config.validate()
    run_dir = _resolve_out(args.out, "run")
    checkpoint = run_train(config, run_dir, resume=args.resume)
    last = checkpoint.history[-1] if checkpoint.history else {}
    eval_part = last.get("eval") or {}
    print(
        f"trained {config.fusion.scheme}/{config.train.task} for {checkpoint.epoch} epochs -> {run_dir}"
        + (f" (OA {eval_part['oa']:.4f}, mIoU {eval_part['miou']:.4f})" if eval_part else "")
    )
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    config, dataset, checkpoint = load_run(args.run)
    fold = args.fold if args.fold is not None else config.train.test_fold
    report = evaluate(checkpoint.model, dataset, fold, config.train, config.fusion)
    print(f"OA {report.oa:.6f}")
    print(f"mIoU {report.miou:.6f}")
    out_json = Path(args.run) / f"eval_fold{fold}.json"
    report.to_json(out_json)
    report.to_csv(Path(args.run) / f"eval_fold{fold}.csv")
    print(f"report written to {out_json}")
    return 0


def cmd_ablate(args: argparse.Namespace) -> int:
    ratios = tuple(float(r) for r in args.ratios.split(","))
    checkpoints = {}
    dataset = None
    for run in args.run:
        config, ds, ckpt = load_run(run)
        checkpoints[Path(run).name] = ckpt
        dataset = ds
    curves = robustness_curve(checkpoints, dataset, grid=ratios, repeats=args.repeats, seed=args.seed or 0)
    out = _resolve_out(args.out, "ablation")
    written = report_emit({"robustness": curves}, out)
    print(f"ablation artifacts: {', '.join(str(p) for p in written)}")
    return 0


def cmd_gradflow(args: argparse.Namespace) -> int:
    config, dataset, checkpoint = load_run(args.run)
    if config.train.optimizer != "sgd":
        raise ConfigurationError("the gradient-flow probe requires SGD; this run is configured with "
                                 f"{config.train.optimizer!r}")
    records: list = []
    probe = flow_recorder(config.fusion, config.train.lr, records)
    flow_train = dataclasses.replace(config.train, epochs=checkpoint.epoch + args.epochs, eval_every=0)
    train(
        checkpoint.model,
        dataset,
        flow_train,
        config.fusion,
        start_epoch=checkpoint.epoch,
        prior_history=checkpoint.history,
        step_probe=probe,
    )
    out = _resolve_out(args.out, "flow") if args.out else Path(args.run) / "flow"
    written = report_emit({"flow": records}, out)
    print(f"recorded {len(records)} flow steps -> {', '.join(str(p) for p in written)}")
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    histories = {}
    for run in args.run:
        history_path = Path(run) / "history.json"
        if history_path.exists():
            histories[Path(run).name] = json.loads(history_path.read_text())
    if not histories:
        raise ConfigurationError("none of the given runs has a history.json")
    out = _resolve_out(args.out, "report")
    written = report_emit({"history": histories}, out)
    print(f"report artifacts: {', '.join(str(p) for p in written)}")
    return 0


# ---------------------------------------------------------------------------
# benchmark matrix
# ---------------------------------------------------------------------------

MATRIX_MODELS: tuple[tuple[str, str, int], ...] = (
    ("S2", "single", 0),
    ("S1A", "single", 1),
    ("S1D", "single", 2),
    ("early", "early", 0),
    ("mid", "mid", 0),
    ("late", "late", 0),
    ("decision", "decision", 0),
)
VARIANTS = ("base", "tdrop", "aux", "aux_tdrop")


def _variant_fusion(fusion: FusionConfig, scheme: str, modality: int, variant: str) -> FusionConfig | None:
    aux = "aux" in variant
    tdrop = "tdrop" in variant
    if aux and scheme in ("single", "early"):
        return None
    n = len(fusion.dropout)
    return dataclasses.replace(
        fusion,
        scheme=scheme,
        single_modality=modality,
        aux_enabled=aux,
        dropout=fusion.dropout if tdrop else (0.0,) * n,
    )


def _benchmark_cell(payload: dict) -> dict:
    """Worker: train and evaluate one (model, variant) cell."""
    config = ExperimentConfig.from_dict(payload["config"])
    run_dir = Path(payload["run_dir"])
    dataset = ensure_dataset(config)
    model = build_model_from(config, dataset)
    run_dir.mkdir(parents=True, exist_ok=True)
    config.save(run_dir / CONFIG_NAME)
    checkpoint = train(model, dataset, config.train, config.fusion)
    save_checkpoint(checkpoint, run_dir)
    report = evaluate(model, dataset, config.train.test_fold, config.train, config.fusion)
    return {
        "model": payload["model"],
        "variant": payload["variant"],
        "oa": report.oa,
        "miou": report.miou,
        "params": parameter_count(model),
    }


def cmd_benchmark(args: argparse.Namespace) -> int:
    config = _load_config(args)
    out = _resolve_out(args.out, "benchmark")
    out.mkdir(parents=True, exist_ok=True)
    ensure_dataset(config)  # generate once before any parallel work

    cells = []
    for model_name, scheme, modality in MATRIX_MODELS:
        for variant in VARIANTS:
            fusion = _variant_fusion(config.fusion, scheme, modality, variant)
            if fusion is None:
                continue
            cell_config = dataclasses.replace(config, fusion=fusion)
            cells.append(
                {
                    "config": cell_config.to_dict(),
                    "run_dir": str(out / "runs" / f"{model_name}_{variant}"),
                    "model": model_name,
                    "variant": variant,
                }
            )

    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_benchmark_cell, cells))
    else:
        results = [_benchmark_cell(cell) for cell in cells]

    by_cell = {(r["model"], r["variant"]): r for r in results}
    rows = []
    for model_name, scheme, _ in MATRIX_MODELS:
        base = by_cell.get((model_name, "base"))
        aux = by_cell.get((model_name, "aux"))
        rows.append(
            {
                "model": model_name,
                "oa_base": base["oa"] if base else None,
                "miou_base": base["miou"] if base else None,
                "miou_tdrop": by_cell.get((model_name, "tdrop"), {}).get("miou"),
                "miou_aux": aux["miou"] if aux else None,
                "miou_aux_tdrop": by_cell.get((model_name, "aux_tdrop"), {}).get("miou"),
                "params_base": base["params"] if base else None,
                "params_aux": aux["params"] if aux else (base["params"] if scheme == "decision" else None),
            }
        )
    written = report_emit({"benchmark": rows}, out)
    print(f"benchmark artifacts: {', '.join(str(p) for p in written)}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sitsfuse", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", required=True, help="experiment config JSON")
        p.add_argument("--seed", type=int, help="override the global seed")

    def add_train_overrides(p: argparse.ArgumentParser) -> None:
        p.add_argument("--task", choices=("parcel", "semantic"))
        p.add_argument("--scheme", choices=("early", "mid", "late", "decision", "single"))
        p.add_argument("--modality", type=int, help="modality index for the single scheme")
        p.add_argument("--epochs", type=int)
        p.add_argument("--optimizer", choices=("adam", "sgd"))
        p.add_argument("--lr", type=float)
        p.add_argument("--batch-size", dest="batch_size", type=int)
        p.add_argument("--eval-every", dest="eval_every", type=int)
        p.add_argument("--aux", choices=("on", "off"))
        p.add_argument("--dropout", help="per-modality drop probabilities, e.g. 0.4,0.2,0.2")
        p.add_argument("--dataset", help="override dataset path")

    p_synth = sub.add_parser("synth", help="generate a synthetic dataset")
    add_config(p_synth)
    p_synth.add_argument("--out", help="dataset output directory (default: config dataset_path)")
    p_synth.add_argument("--force", action="store_true", help="overwrite an existing dataset")
    p_synth.set_defaults(func=cmd_synth)

    p_folds = sub.add_parser("folds", help="show or recompute fold assignment")
    p_folds.add_argument("--dataset", required=True)
    p_folds.add_argument("--n-folds", dest="n_folds", type=int)
    p_folds.add_argument("--seed", type=int)
    p_folds.set_defaults(func=cmd_folds)

    p_train = sub.add_parser("train", help="train one model")
    add_config(p_train)
    add_train_overrides(p_train)
    p_train.add_argument("--out", help="run directory")
    p_train.add_argument("--resume", action="store_true", help="continue from the run's checkpoint")
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a trained run")
    p_eval.add_argument("--run", required=True)
    p_eval.add_argument("--fold", type=int)
    p_eval.set_defaults(func=cmd_eval)

    p_ablate = sub.add_parser("ablate", help="cloud-robustness ablation over keep ratios")
    p_ablate.add_argument("--run", action="append", required=True, help="trained run directory (repeatable)")
    p_ablate.add_argument("--ratios", default="1.0,0.9,0.8,0.7,0.6,0.5,0.4,0.3,0.2,0.1")
    p_ablate.add_argument("--repeats", type=int, default=3)
    p_ablate.add_argument("--seed", type=int)
    p_ablate.add_argument("--out")
    p_ablate.set_defaults(func=cmd_ablate)

    p_flow = sub.add_parser("gradflow", help="record gradient flow during extra SGD epochs")
    p_flow.add_argument("--run", required=True)
    p_flow.add_argument("--epochs", type=int, default=1)
    p_flow.add_argument("--out")
    p_flow.set_defaults(func=cmd_gradflow)

    p_report = sub.add_parser("report", help="render tables and figures for finished runs")
    p_report.add_argument("--run", action="append", required=True)
    p_report.add_argument("--out")
    p_report.set_defaults(func=cmd_report)

    p_bench = sub.add_parser("benchmark", help="run the full scheme-by-enhancement matrix")
    add_config(p_bench)
    add_train_overrides(p_bench)
    p_bench.add_argument("--out")
    p_bench.add_argument("--jobs", type=int, default=1)
    p_bench.set_defaults(func=cmd_benchmark)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (ConfigurationError, ValidationError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (FileNotFoundError, TensorFormatError, TrainingError, MetricError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

"""Report emission: delimited tables plus rendered figures.

Every artifact gets a deterministic file name inside the output directory;
emitting the same records twice produces identical CSV bytes. Figures are
rendered with the Agg backend so the path works headless.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .analysis import GradientFlowRecord, RobustnessCurve

BENCHMARK_COLUMNS = (
    "model",
    "oa_base",
    "miou_base",
    "miou_tdrop",
    "miou_aux",
    "miou_aux_tdrop",
    "params_base",
    "params_aux",
)


def report_emit(records: dict, out_dir: Path | str) -> list[Path]:
    """Write tables, JSON, and figures for whichever records are present.

    Recognized keys: "benchmark" (list of row dicts), "robustness"
    (model -> RobustnessCurve), "flow" (list of GradientFlowRecord),
    "history" (model -> per-epoch records), "metrics" (name -> MetricReport).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    if records.get("benchmark"):
        written += _emit_benchmark(records["benchmark"], out)
    if records.get("robustness"):
        written += _emit_robustness(records["robustness"], out)
    if records.get("flow"):
        written += _emit_flow(records["flow"], out)
    if records.get("history"):
        written += _emit_history(records["history"], out)
    for name, report in sorted((records.get("metrics") or {}).items()):
        written.append(report.to_json(out / f"metrics_{name}.json"))
        written.append(report.to_csv(out / f"metrics_{name}.csv"))
    return written


def _fmt(value) -> str:
    if value is None:
        return "-"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _emit_benchmark(rows: list[dict], out: Path) -> list[Path]:
    csv_path = out / "benchmark.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(BENCHMARK_COLUMNS)
        for row in rows:
            writer.writerow([_fmt(row.get(col)) for col in BENCHMARK_COLUMNS])
    (out / "benchmark.json").write_text(json.dumps(rows, indent=2, sort_keys=True, default=str) + "\n")

    fig, ax = plt.subplots(figsize=(7, 4))
    names = [row["model"] for row in rows]
    base = [row.get("miou_base") for row in rows]
    ax.bar(range(len(names)), [b if b is not None else 0.0 for b in base], color="#4878d0")
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=30, ha="right")
    ax.set_ylabel("mIoU (base)")
    ax.set_title("Fusion scheme comparison")
    fig.tight_layout()
    png_path = out / "benchmark.png"
    fig.savefig(png_path)
    plt.close(fig)
    return [csv_path, png_path]


def _emit_robustness(curves: dict[str, RobustnessCurve], out: Path) -> list[Path]:
    csv_path = out / "robustness.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model", "ratio", "repeat", "seed", "miou", "oa"])
        for name in sorted(curves):
            for row in curves[name].rows:
                writer.writerow(
                    [row["model"], _fmt(row["ratio"]), row["repeat"], row["seed"], _fmt(row["miou"]), _fmt(row["oa"])]
                )

    fig, ax = plt.subplots(figsize=(7, 4))
    for name in sorted(curves):
        curve = curves[name]
        ax.errorbar(curve.ratios, curve.miou_mean, yerr=curve.miou_std, marker="o", capsize=3, label=name)
    ax.set_xlabel("kept optical acquisition ratio")
    ax.set_ylabel("mIoU")
    ax.set_title("Robustness to missing optical acquisitions")
    ax.invert_xaxis()
    ax.legend(fontsize=8)
    fig.tight_layout()
    png_path = out / "robustness.png"
    fig.savefig(png_path)
    plt.close(fig)
    return [csv_path, png_path]


def _emit_flow(records: list[GradientFlowRecord], out: Path) -> list[Path]:
    csv_path = out / "flow.csv"
    modules = sorted({name for rec in records for name in rec.values})
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "module", "value", "fraction"])
        for rec in records:
            for name in modules:
                frac = rec.fractions.get(name) if rec.fractions is not None else None
                writer.writerow([rec.step, name, _fmt(rec.values.get(name)), _fmt(frac)])
    meta = {"eta": records[0].eta if records else None, "totals": [rec.total for rec in records]}
    (out / "flow.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")

    fig, ax = plt.subplots(figsize=(8, 4.5))
    steps = [rec.step for rec in records]
    for name in modules:
        series = [
            (rec.fractions.get(name, 0.0) if rec.fractions is not None else float("nan")) for rec in records
        ]
        ax.plot(steps, series, label=name, linewidth=1.2)
    ax.set_xlabel("step")
    ax.set_ylabel("fraction of gradient flow")
    ax.set_title("Objective-loss gradient flow per module")
    ax.legend(fontsize=7, ncol=2)
    fig.tight_layout()
    png_path = out / "flow.png"
    fig.savefig(png_path)
    plt.close(fig)
    return [csv_path, png_path]


def _emit_history(histories: dict[str, list[dict]], out: Path) -> list[Path]:
    csv_path = out / "history.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model", "epoch", "lr", "loss", "objective", "eval_oa", "eval_miou"])
        for name in sorted(histories):
            for rec in histories[name]:
                ev = rec.get("eval") or {}
                writer.writerow(
                    [name, rec["epoch"], _fmt(rec.get("lr")), _fmt(rec.get("loss")),
                     _fmt(rec.get("objective")), _fmt(ev.get("oa")), _fmt(ev.get("miou"))]
                )

    fig, ax = plt.subplots(figsize=(7, 4))
    for name in sorted(histories):
        recs = histories[name]
        ax.plot([r["epoch"] for r in recs], [r["loss"] for r in recs], label=name, linewidth=1.2)
    ax.set_xlabel("epoch")
    ax.set_ylabel("training loss")
    ax.set_title("Training curves")
    ax.legend(fontsize=8)
    fig.tight_layout()
    png_path = out / "history.png"
    fig.savefig(png_path)
    plt.close(fig)
    return [csv_path, png_path]

"""Training diagnostics: gradient-flow attribution and cloud-robustness
ablation.

The flow probe evaluates, per named module, the inner product between the
gradient of the full training loss and the gradient of the objective loss.
Scaled by the learning rate this first-order estimate predicts how much one
plain SGD step decreases the objective, and the per-module shares show
which parts of the network drive that decrease. The estimate is only valid
for plain SGD; momentum and adaptive optimizers are rejected.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .data.batch import Batch
from .fusion import FusionConfig, compute_losses
from .metrics import MetricReport
from .seeding import child_seed, rng_stream
from .tasks import Checkpoint, SitsDataset, evaluate


@dataclass
class GradientFlowRecord:
    """Per-module share of <grad(total), grad(objective)> at one step."""

    step: int
    eta: float
    values: dict[str, float]
    total: float
    fractions: dict[str, float] | None  # None when the total flow is zero

    @property
    def predicted_decrease(self) -> float:
        return self.eta * self.total


def gradient_flow_probe(
    model: nn.Module,
    batch: Batch,
    target: torch.Tensor,
    fusion: FusionConfig,
    eta: float,
    ignore_value: int | None = None,
    step: int = 0,
) -> GradientFlowRecord:
    """Two backward passes, no parameter update.

    Computes grad of the total loss (objective plus weighted auxiliary
    terms) and grad of the objective alone, then sums their elementwise
    product per module-map entry.
    """
    losses = compute_losses(model(batch), target, fusion, ignore_value)
    module_map = model.module_map()
    named_params: list[tuple[str, torch.Tensor]] = []
    for name, module in module_map.items():
        for p in module.parameters():
            named_params.append((name, p))
    params = [p for _, p in named_params]
    grad_total = torch.autograd.grad(losses.total, params, retain_graph=True, allow_unused=True)
    grad_obj = torch.autograd.grad(losses.objective, params, allow_unused=True)

    values = {name: 0.0 for name in module_map}
    for (name, _), gt, go in zip(named_params, grad_total, grad_obj):
        if gt is None or go is None:
            continue
        values[name] += float((gt.double() * go.double()).sum())
    total = float(sum(values.values()))
    fractions = {k: v / total for k, v in values.items()} if total != 0.0 else None
    return GradientFlowRecord(step=step, eta=eta, values=values, total=total, fractions=fractions)


def flow_recorder(fusion: FusionConfig, eta: float, records: list[GradientFlowRecord]):
    """Step probe for tasks.train that appends one record per step."""

    def probe(model: nn.Module, batch: Batch, target: torch.Tensor, ignore_value: int | None) -> None:
        records.append(
            gradient_flow_probe(model, batch, target, fusion, eta, ignore_value, step=len(records))
        )

    return probe


def predicted_vs_measured_decrease(
    model: nn.Module,
    batch: Batch,
    target: torch.Tensor,
    fusion: FusionConfig,
    eta: float,
    ignore_value: int | None = None,
) -> tuple[float, float]:
    """Return (eta * <grad L, grad L_obj>, objective decrease after one SGD step).

    The step is taken on the total loss and rolled back afterwards.
    """
    losses = compute_losses(model(batch), target, fusion, ignore_value)
    params = [p for p in model.parameters() if p.requires_grad]
    grads = torch.autograd.grad(losses.total, params, retain_graph=True, allow_unused=True)
    grads_obj = torch.autograd.grad(losses.objective, params, allow_unused=True)
    predicted = eta * float(
        sum(
            (gt.double() * go.double()).sum()
            for gt, go in zip(grads, grads_obj)
            if gt is not None and go is not None
        )
    )
    before = float(losses.objective.detach())
    with torch.no_grad():
        for p, g in zip(params, grads):
            if g is not None:
                p -= eta * g
    with torch.no_grad():
        after = float(compute_losses(model(batch), target, fusion, ignore_value).objective)
    with torch.no_grad():
        for p, g in zip(params, grads):
            if g is not None:
                p += eta * g
    return predicted, before - after


# ---------------------------------------------------------------------------
# varying cloud cover
# ---------------------------------------------------------------------------

def cloud_ablation(
    checkpoint: Checkpoint,
    dataset: SitsDataset,
    keep_ratio: float,
    rng: np.random.Generator,
    fold: int | None = None,
) -> MetricReport:
    """Evaluate with only ceil(keep_ratio * T) optical acquisitions per
    sample (at least one); the radar series stay untouched."""
    if not 0.0 < keep_ratio <= 1.0:
        raise ValueError(f"keep_ratio must be in (0, 1], got {keep_ratio}")
    cfg = checkpoint.train_config
    return evaluate(
        checkpoint.model,
        dataset,
        checkpoint.train_config.test_fold if fold is None else fold,
        cfg,
        checkpoint.fusion_config,
        optical_subsample=(keep_ratio, rng),
    )


DEFAULT_GRID = (1.0, 0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3, 0.2, 0.1)


@dataclass
class RobustnessCurve:
    """Metric means and deviations over subsampling repeats per keep ratio."""

    ratios: tuple[float, ...]
    miou_mean: list[float]
    miou_std: list[float]
    oa_mean: list[float]
    oa_std: list[float]
    rows: list[dict]  # one per (ratio, repeat)


def robustness_curve(
    checkpoints: dict[str, Checkpoint],
    dataset: SitsDataset,
    grid: tuple[float, ...] = DEFAULT_GRID,
    repeats: int = 3,
    seed: int = 0,
    fold: int | None = None,
) -> dict[str, RobustnessCurve]:
    """Run the cloud ablation over a descending keep-ratio grid."""
    if repeats < 3:
        raise ValueError("need at least 3 subsampling repeats for a mean/std estimate")
    ratios = tuple(sorted(set(grid), reverse=True))
    curves = {}
    for name in sorted(checkpoints):
        ckpt = checkpoints[name]
        miou_mean, miou_std, oa_mean, oa_std, rows = [], [], [], [], []
        for ratio in ratios:
            mious, oas = [], []
            for rep in range(repeats):
                rep_seed = child_seed(seed, f"ablate/{name}/{ratio}/{rep}")
                rng = rng_stream(rep_seed, "subsample")
                report = cloud_ablation(ckpt, dataset, ratio, rng, fold)
                mious.append(report.miou)
                oas.append(report.oa)
                rows.append(
                    {"model": name, "ratio": ratio, "repeat": rep, "seed": rep_seed,
                     "miou": report.miou, "oa": report.oa}
                )
            miou_mean.append(float(np.mean(mious)))
            miou_std.append(float(np.std(mious)))
            oa_mean.append(float(np.mean(oas)))
            oa_std.append(float(np.std(oas)))
        curves[name] = RobustnessCurve(ratios, miou_mean, miou_std, oa_mean, oa_std, rows)
    return curves

"""Training loops and evaluation drivers for parcel classification and
semantic segmentation.

All randomness (shuffling, pixel sampling, temporal dropout) comes from
named streams keyed by (seed, epoch, batch), so a fixed seed reproduces a
run exactly and a resumed run replays the same schedule as a continuous one.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import torch
from torch import nn

from .checkpoint import load_parameters, save_parameters
from .data.batch import Batch, collate, normalize
from .data.io import load_fold_samples, load_manifest
from .data.types import DatasetManifest, MultimodalSample, void_value
from .fusion import ConfigurationError, FusionConfig, compute_losses, subsample_modality, temporal_dropout
from .metrics import ConfusionMatrix, MetricReport, confusion_update
from .seeding import rng_stream

OPTIMIZERS = ("adam", "sgd")


class TrainingError(Exception):
    """Raised when training aborts (non-finite loss, bad fold setup)."""


@dataclass(frozen=True)
class TrainConfig:
    """Optimization settings. Defaults are desk scale; full scale uses 100
    epochs and the same batch sizes."""

    task: str = "parcel"
    epochs: int = 20
    batch_size: int | None = None  # parcel 128, semantic 4 when unset
    optimizer: str = "adam"
    lr: float = 0.001
    betas: tuple[float, float] = (0.9, 0.999)
    lr_steps: tuple[tuple[int, float], ...] = ()  # step decay: (epoch, lr)
    seed: int = 0
    train_folds: tuple[int, ...] = (1, 2, 3, 4)
    test_fold: int = 5
    eval_every: int = 1  # 0 disables in-training evaluation

    def validate(self) -> None:
        if self.task not in ("parcel", "semantic"):
            raise ConfigurationError(f"unknown task {self.task!r}")
        if self.epochs <= 0:
            raise ConfigurationError("epochs must be positive")
        if self.batch_size is not None and self.batch_size <= 0:
            raise ConfigurationError("batch size must be positive")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigurationError(f"unknown optimizer {self.optimizer!r}, expected one of {OPTIMIZERS}")
        if not set(self.train_folds).isdisjoint({self.test_fold}):
            raise ConfigurationError("test fold must not appear among the train folds")

    def resolved_batch_size(self) -> int:
        if self.batch_size is not None:
            return self.batch_size
        return 128 if self.task == "parcel" else 4

    def lr_at(self, epoch: int) -> float:
        lr = self.lr
        for step_epoch, step_lr in sorted(self.lr_steps):
            if epoch >= step_epoch:
                lr = step_lr
        return lr


@dataclass
class SitsDataset:
    """A manifest plus its samples loaded in memory."""

    manifest: DatasetManifest
    samples: dict[str, MultimodalSample]

    @classmethod
    def load(cls, root: Path | str, folds: list[int] | None = None) -> "SitsDataset":
        manifest = load_manifest(root)
        samples = {s.patch_id: s for s in load_fold_samples(manifest, folds)}
        return cls(manifest, samples)

    def fold_samples(self, folds: tuple[int, ...] | list[int]) -> list[MultimodalSample]:
        wanted = set(folds)
        out = [self.samples[p] for p in self.manifest.patch_ids if self.manifest.folds[p] in wanted and p in self.samples]
        if not out:
            raise TrainingError(f"no samples available in folds {sorted(wanted)}")
        return out


@dataclass(frozen=True)
class ParcelRef:
    """One parcel of one patch with precomputed pixel coordinates."""

    patch_id: str
    parcel_id: int
    label: int
    ys: np.ndarray = field(repr=False, hash=False, compare=False)
    xs: np.ndarray = field(repr=False, hash=False, compare=False)


def parcel_index(samples: list[MultimodalSample]) -> list[ParcelRef]:
    refs = []
    for s in samples:
        instances = s.annotations.instances
        for pid in sorted(s.annotations.parcel_labels):
            ys, xs = np.nonzero(instances == pid)
            if ys.size == 0:
                continue
            refs.append(ParcelRef(s.patch_id, pid, s.annotations.parcel_labels[pid], ys, xs))
    if not refs:
        raise TrainingError("no parcels found in the requested samples")
    return refs


def make_parcel_batch(
    dataset: SitsDataset, refs: list[ParcelRef], n_pixels: int, rng: np.random.Generator
) -> Batch:
    """Assemble a pixel-set batch: data tensors are (B, T_m, C_m, S)."""
    n_mod = dataset.manifest.n_modalities
    data, masks, dates = [], [], []
    per_mod_picks = []
    for ref in refs:
        picks = []
        for _ in range(n_mod):
            idx = rng.integers(0, ref.ys.size, size=n_pixels)
            picks.append((ref.ys[idx], ref.xs[idx]))
        per_mod_picks.append(picks)
    for m in range(n_mod):
        series = [dataset.samples[r.patch_id].modalities[m] for r in refs]
        t_max = max(s.n_steps for s in series)
        c = series[0].n_channels
        block = np.zeros((len(refs), t_max, c, n_pixels), dtype=np.float32)
        date_arr = np.full((len(refs), t_max), -1, dtype=np.int64)
        mask_arr = np.zeros((len(refs), t_max), dtype=bool)
        for b, (ref, s) in enumerate(zip(refs, series)):
            ys, xs = per_mod_picks[b][m]
            block[b, : s.n_steps] = s.data[:, :, ys, xs]
            date_arr[b, : s.n_steps] = s.dates
            mask_arr[b, : s.n_steps] = True
        data.append(torch.from_numpy(block))
        dates.append(torch.from_numpy(date_arr))
        masks.append(torch.from_numpy(mask_arr))
    labels = torch.tensor([r.label for r in refs], dtype=torch.int64)
    return Batch(data=data, mask=masks, dates=dates, patch_ids=[r.patch_id for r in refs], labels=labels)


def _pixel_count(model: nn.Module) -> int:
    pse = getattr(model, "pse")
    if isinstance(pse, nn.ModuleList):
        return pse[0].config.n_pixels
    return pse.config.n_pixels


def _batch_target(batch: Batch, task: str) -> torch.Tensor:
    return batch.labels if task == "parcel" else batch.semantic


def _ignore_value(manifest: DatasetManifest, task: str) -> int | None:
    return None if task == "parcel" else void_value(manifest.n_classes)


@dataclass
class Checkpoint:
    """A trained model with its schedule position and training history."""

    model: nn.Module
    train_config: TrainConfig
    fusion_config: FusionConfig
    epoch: int
    history: list[dict]


def train(
    model: nn.Module,
    dataset: SitsDataset,
    config: TrainConfig,
    fusion: FusionConfig,
    start_epoch: int = 0,
    prior_history: list[dict] | None = None,
    step_probe: Callable[[nn.Module, Batch, torch.Tensor, int | None], None] | None = None,
) -> Checkpoint:
    """Run shuffled minibatch epochs of normalize -> temporal dropout ->
    forward -> losses -> optimizer step; deterministic given the seed."""
    config.validate()
    fusion.validate(dataset.manifest.n_modalities)
    if step_probe is not None and config.optimizer != "sgd":
        raise ConfigurationError("the gradient-flow probe requires plain SGD (no momentum, no adaptivity)")

    train_samples = dataset.fold_samples(config.train_folds)
    if config.task == "parcel":
        items: list = parcel_index(train_samples)
        n_pixels = _pixel_count(model)
    else:
        items = train_samples
        n_pixels = 0
    batch_size = config.resolved_batch_size()
    ignore = _ignore_value(dataset.manifest, config.task)

    if config.optimizer == "adam":
        optimizer = torch.optim.Adam(model.parameters(), lr=config.lr, betas=config.betas)
    else:
        optimizer = torch.optim.SGD(model.parameters(), lr=config.lr)

    history = list(prior_history or [])
    for epoch in range(start_epoch, config.epochs):
        lr = config.lr_at(epoch)
        for group in optimizer.param_groups:
            group["lr"] = lr
        order = rng_stream(config.seed, f"shuffle/{epoch}").permutation(len(items))
        epoch_losses, epoch_obj = [], []
        model.train()
        for i in range(0, len(order), batch_size):
            chosen = [items[j] for j in order[i : i + batch_size]]
            pix_rng = rng_stream(config.seed, f"pixels/{epoch}/{i}")
            if config.task == "parcel":
                batch = make_parcel_batch(dataset, chosen, n_pixels, pix_rng)
            else:
                batch = collate(chosen)
            batch = normalize(batch, dataset.manifest)
            batch = temporal_dropout(batch, fusion.dropout, rng_stream(config.seed, f"tdrop/{epoch}/{i}"), "train")
            prediction = model(batch)
            losses = compute_losses(prediction, _batch_target(batch, config.task), fusion, ignore)
            total_value = float(losses.total.detach())
            if not math.isfinite(total_value):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {i // batch_size}")
            if step_probe is not None:
                step_probe(model, batch, _batch_target(batch, config.task), ignore)
            optimizer.zero_grad()
            losses.total.backward()
            optimizer.step()
            epoch_losses.append(total_value)
            epoch_obj.append(float(losses.objective.detach()))
        record = {
            "epoch": epoch,
            "lr": lr,
            "loss": float(np.mean(epoch_losses)),
            "objective": float(np.mean(epoch_obj)),
        }
        if config.eval_every and (epoch + 1) % config.eval_every == 0:
            report = evaluate(model, dataset, config.test_fold, config, fusion)
            record["eval"] = {"oa": report.oa, "miou": report.miou}
        history.append(record)
    return Checkpoint(model, config, fusion, epoch=config.epochs, history=history)


def evaluate(
    model: nn.Module,
    dataset: SitsDataset,
    fold: int,
    config: TrainConfig,
    fusion: FusionConfig,
    optical_subsample: tuple[float, np.random.Generator] | None = None,
) -> MetricReport:
    """Aggregate confusion counts over a fold; pure and deterministic.

    No temporal dropout is applied: inference uses all available
    observations (unless `optical_subsample` deliberately removes some).
    """
    samples = dataset.fold_samples((fold,))
    if config.task == "parcel":
        items: list = parcel_index(samples)
        n_pixels = _pixel_count(model)
        n_eval_classes = dataset.manifest.n_classes
    else:
        items = samples
        n_pixels = 0
        n_eval_classes = dataset.manifest.n_classes + 1
    batch_size = config.resolved_batch_size()
    cm = ConfusionMatrix(n_eval_classes)
    pix_rng = rng_stream(config.seed, "eval/pixels")

    was_training = model.training
    model.eval()
    with torch.no_grad():
        for i in range(0, len(items), batch_size):
            chosen = items[i : i + batch_size]
            if config.task == "parcel":
                batch = make_parcel_batch(dataset, chosen, n_pixels, pix_rng)
            else:
                batch = collate(chosen)
            batch = normalize(batch, dataset.manifest)
            if optical_subsample is not None:
                ratio, sub_rng = optical_subsample
                batch = subsample_modality(batch, 0, ratio, sub_rng)
            prediction = model(batch)
            predicted = prediction.scores.argmax(dim=1).numpy()
            target = _batch_target(batch, config.task).numpy()
            confusion_update(cm, predicted, target)
    if was_training:
        model.train()
    return MetricReport.from_confusion(config.task, cm, dataset.manifest.class_names or None)


# ---------------------------------------------------------------------------
# checkpoint directories
# ---------------------------------------------------------------------------

def save_checkpoint(ckpt: Checkpoint, run_dir: Path | str) -> Path:
    run_dir = Path(run_dir)
    params_dir = run_dir / "checkpoint"
    save_parameters(ckpt.model, params_dir)
    meta = {"epoch": ckpt.epoch, "task": ckpt.train_config.task}
    (params_dir / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    (run_dir / "history.json").write_text(json.dumps(ckpt.history, indent=2, sort_keys=True) + "\n")
    return run_dir


def load_checkpoint_into(model: nn.Module, run_dir: Path | str) -> tuple[int, list[dict]]:
    """Restore parameters into `model`; returns (epoch, history)."""
    run_dir = Path(run_dir)
    load_parameters(model, run_dir / "checkpoint")
    meta = json.loads((run_dir / "checkpoint" / "meta.json").read_text())
    history_path = run_dir / "history.json"
    history = json.loads(history_path.read_text()) if history_path.exists() else []
    return int(meta["epoch"]), history

"""Fusion schemes, temporal dropout, and loss composition.

Shape contracts: early fusion concatenates channels after interpolating to
the target modality's dates (C = sum of C_m); mid fusion stacks feature
sequences chronologically (T = sum of T_m); late fusion concatenates
embeddings (F = sum of F_m); decision fusion averages per-modality class
probabilities and returns log-probabilities.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import math

import numpy as np
import torch
from torch.nn import functional as F

from .data.batch import DATE_PAD, Batch
from .data.types import ModalitySeries, MultimodalSample

SCHEMES = ("early", "mid", "late", "decision", "single")
IGNORE_INDEX = -100


class ConfigurationError(Exception):
    """Raised for illegal scheme/task/enhancement combinations."""


@dataclass(frozen=True)
class FusionConfig:
    """Scheme selector plus enhancement strengths.

    `aux_weights` are the per-modality auxiliary loss strengths and
    `dropout` the per-modality acquisition drop probabilities; both follow
    modality order. `single_modality` only applies to the "single" scheme.
    """

    scheme: str = "late"
    aux_enabled: bool = False
    aux_weights: tuple[float, ...] = (0.5, 0.5, 0.5)
    dropout: tuple[float, ...] = (0.4, 0.2, 0.2)
    interp_target: int = 0
    single_modality: int = 0

    def validate(self, n_modalities: int | None = None) -> None:
        if self.scheme not in SCHEMES:
            raise ConfigurationError(f"unknown fusion scheme {self.scheme!r}, expected one of {SCHEMES}")
        if any(w < 0 for w in self.aux_weights):
            raise ConfigurationError("auxiliary weights must be non-negative")
        if any(not 0.0 <= p < 1.0 for p in self.dropout):
            raise ConfigurationError("dropout probabilities must lie in [0, 1)")
        if n_modalities is not None:
            if len(self.aux_weights) != n_modalities or len(self.dropout) != n_modalities:
                raise ConfigurationError(
                    f"aux_weights/dropout must have one entry per modality ({n_modalities})"
                )
            if not 0 <= self.interp_target < n_modalities:
                raise ConfigurationError(f"interpolation target {self.interp_target} out of range")
            if self.scheme == "single" and not 0 <= self.single_modality < n_modalities:
                raise ConfigurationError(f"single_modality {self.single_modality} out of range")


@dataclass
class Prediction:
    """Class scores per parcel or per pixel (class axis = dim 1).

    `scores` are logits unless `log_space`, in which case they are
    log-probabilities. `per_modality` holds raw per-modality logits when the
    model exposes them (decision fusion, auxiliary heads).
    """

    scores: torch.Tensor
    log_space: bool = False
    per_modality: list[torch.Tensor] | None = None


@dataclass
class LossBreakdown:
    objective: torch.Tensor
    aux: list[torch.Tensor]
    total: torch.Tensor


# ---------------------------------------------------------------------------
# temporal interpolation and early fusion
# ---------------------------------------------------------------------------

def interpolate_to_dates(series: ModalitySeries, target_dates: np.ndarray) -> ModalitySeries:
    """Piecewise-linear resampling per channel and pixel over day-of-year.

    Targets outside the source range take the nearest endpoint value.
    """
    series.validate()
    target = np.asarray(target_dates, dtype=np.int32)
    values = _linear_resample(
        torch.from_numpy(series.data),
        torch.from_numpy(series.dates.astype(np.int64)),
        torch.from_numpy(target.astype(np.int64)),
    ).numpy()
    return ModalitySeries(series.modality_id, values, target)


def _linear_resample(values: torch.Tensor, src_days: torch.Tensor, dst_days: torch.Tensor) -> torch.Tensor:
    """Interpolate values (T, ...) sampled at src_days onto dst_days."""
    t = values.shape[0]
    if t == 1:
        return values.expand(dst_days.shape[0], *values.shape[1:]).clone()
    left = torch.clamp(torch.searchsorted(src_days, dst_days, right=True) - 1, 0, t - 2)
    right = left + 1
    span = (src_days[right] - src_days[left]).to(values.dtype)
    w = ((dst_days - src_days[left]).to(values.dtype) / span).clamp(0.0, 1.0)
    w = w.reshape(-1, *([1] * (values.ndim - 1)))
    return (1.0 - w) * values[left] + w * values[right]


def early_fuse(sample: MultimodalSample, config: FusionConfig) -> ModalitySeries:
    """Interpolate every modality to the target's dates and stack channels."""
    if len(sample.modalities) == 1:
        return sample.modalities[0]
    target = sample.modalities[config.interp_target]
    blocks = []
    for series in sample.modalities:
        if series.modality_id == config.interp_target:
            blocks.append(series.data)
        else:
            blocks.append(interpolate_to_dates(series, target.dates).data)
    return ModalitySeries(0, np.concatenate(blocks, axis=1), target.dates)


def early_fuse_batch(batch: Batch, target: int = 0) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Batched early fusion respecting padding masks.

    Returns (data, dates, mask) where data is (B, T', sum C_m, *spatial) and
    T' is the largest kept target-step count in the batch.
    """
    t_mask = batch.mask[target]
    kept_counts = t_mask.sum(dim=1)
    t_out = int(kept_counts.max())
    total_c = sum(d.shape[2] for d in batch.data)
    spatial = batch.data[target].shape[3:]
    ref = batch.data[target]
    data = ref.new_zeros(batch.size, t_out, total_c, *spatial)
    dates = torch.full((batch.size, t_out), DATE_PAD, dtype=torch.int64)
    mask = torch.zeros(batch.size, t_out, dtype=torch.bool)
    for b in range(batch.size):
        keep = t_mask[b]
        n = int(keep.sum())
        dst_days = batch.dates[target][b][keep]
        dates[b, :n] = dst_days
        mask[b, :n] = True
        offset = 0
        for m in range(batch.n_modalities):
            c = batch.data[m].shape[2]
            if m == target:
                data[b, :n, offset : offset + c] = batch.data[m][b][keep]
            else:
                src_keep = batch.mask[m][b]
                data[b, :n, offset : offset + c] = _linear_resample(
                    batch.data[m][b][src_keep], batch.dates[m][b][src_keep], dst_days
                )
            offset += c
    return data, dates, mask


# ---------------------------------------------------------------------------
# mid / late / decision fusion
# ---------------------------------------------------------------------------

def mid_fuse(
    features: list[torch.Tensor], dates: list[torch.Tensor], masks: list[torch.Tensor]
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Stack per-modality feature sequences chronologically along time.

    Inputs are (B, T_m, F) with equal F. Date ties order by modality id;
    padded positions sort to the end. Returns (B, sum T_m, F) plus merged
    dates and mask.
    """
    widths = {f.shape[-1] for f in features}
    if len(widths) != 1:
        raise ConfigurationError(f"mid fusion needs equal feature widths, got {sorted(widths)}")
    if len(features) == 1:
        return features[0], dates[0], masks[0]
    feats = torch.cat(features, dim=1)
    days = torch.cat(dates, dim=1)
    mask = torch.cat(masks, dim=1)
    tags = torch.cat(
        [torch.full_like(d, m) for m, d in enumerate(dates)], dim=1
    )
    n_mod = len(features)
    key = (~mask).long() * (1 << 20) + (days + 1) * n_mod + tags
    order = torch.argsort(key, dim=1, stable=True)
    feats = torch.gather(feats, 1, order.unsqueeze(-1).expand_as(feats))
    return feats, torch.gather(days, 1, order), torch.gather(mask, 1, order)


def late_fuse(embeddings: list[torch.Tensor]) -> torch.Tensor:
    """Channelwise concatenation of per-modality embeddings."""
    return torch.cat(embeddings, dim=-1)


def decision_fuse(predictions: list[Prediction]) -> Prediction:
    """Average per-modality class probabilities; returns log-probabilities."""
    sizes = {p.scores.shape for p in predictions}
    if len(sizes) != 1:
        raise ConfigurationError(f"decision fusion needs equal score shapes, got {sizes}")
    log_probs = torch.stack([F.log_softmax(p.scores, dim=1) for p in predictions])
    fused = torch.logsumexp(log_probs, dim=0) - math.log(len(predictions))
    return Prediction(fused, log_space=True, per_modality=[p.scores for p in predictions])


# ---------------------------------------------------------------------------
# temporal dropout
# ---------------------------------------------------------------------------

def temporal_dropout(
    batch: Batch, p: tuple[float, ...], rng: np.random.Generator, phase: str = "train"
) -> Batch:
    """Randomly drop acquisitions per modality during training.

    Each real acquisition of modality m is dropped independently with
    probability p[m]; a sample that would lose a whole modality force-keeps
    one uniformly chosen acquisition. Identity at evaluation time.
    """
    if phase not in ("train", "eval"):
        raise ValueError(f"phase must be 'train' or 'eval', got {phase!r}")
    if phase == "eval" or all(prob == 0 for prob in p):
        return batch
    if len(p) != batch.n_modalities:
        raise ConfigurationError(f"need one dropout probability per modality, got {len(p)}")
    data, masks, dates = list(batch.data), list(batch.mask), list(batch.dates)
    for m, prob in enumerate(p):
        if prob == 0:
            continue
        real = batch.mask[m].numpy()
        keep = real & (rng.random(real.shape) >= prob)
        for b in range(real.shape[0]):
            if real[b].any() and not keep[b].any():
                candidates = np.flatnonzero(real[b])
                keep[b, rng.choice(candidates)] = True
        keep_t = torch.from_numpy(keep)
        shape = (batch.size, -1) + (1,) * (data[m].ndim - 2)
        data[m] = data[m] * keep_t.reshape(shape).to(data[m].dtype)
        dates[m] = torch.where(keep_t, batch.dates[m], torch.tensor(DATE_PAD, dtype=torch.int64))
        masks[m] = keep_t
    return replace(batch, data=data, mask=masks, dates=dates)


def subsample_modality(
    batch: Batch, modality: int, keep_ratio: float, rng: np.random.Generator
) -> Batch:
    """Keep ceil(keep_ratio * T) uniformly chosen acquisitions of one modality.

    Inference-time helper for the varying-cloud-cover harness; every sample
    retains at least one acquisition and all other modalities are untouched.
    """
    if not 0.0 < keep_ratio <= 1.0:
        raise ValueError(f"keep_ratio must be in (0, 1], got {keep_ratio}")
    if keep_ratio == 1.0:
        return batch
    real = batch.mask[modality].numpy()
    keep = np.zeros_like(real)
    for b in range(real.shape[0]):
        candidates = np.flatnonzero(real[b])
        n_keep = max(1, math.ceil(keep_ratio * candidates.size))
        chosen = rng.choice(candidates, size=n_keep, replace=False)
        keep[b, chosen] = True
    keep_t = torch.from_numpy(keep)
    data, masks, dates = list(batch.data), list(batch.mask), list(batch.dates)
    shape = (batch.size, -1) + (1,) * (data[modality].ndim - 2)
    data[modality] = data[modality] * keep_t.reshape(shape).to(data[modality].dtype)
    dates[modality] = torch.where(keep_t, batch.dates[modality], torch.tensor(DATE_PAD, dtype=torch.int64))
    masks[modality] = keep_t
    return replace(batch, data=data, mask=masks, dates=dates)


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def _criterion(scores: torch.Tensor, target: torch.Tensor, log_space: bool, ignore_value: int | None) -> torch.Tensor:
    ignore = ignore_value if ignore_value is not None else IGNORE_INDEX
    if log_space:
        return F.nll_loss(scores, target, ignore_index=ignore)
    return F.cross_entropy(scores, target, ignore_index=ignore)


def compute_losses(
    prediction: Prediction,
    target: torch.Tensor,
    config: FusionConfig,
    ignore_value: int | None = None,
) -> LossBreakdown:
    """Cross-entropy objective plus weighted per-modality auxiliary terms."""
    objective = _criterion(prediction.scores, target, prediction.log_space, ignore_value)
    aux: list[torch.Tensor] = []
    total = objective
    if config.aux_enabled:
        if prediction.per_modality is None:
            raise ConfigurationError("auxiliary loss requested but the model produced no per-modality predictions")
        if len(prediction.per_modality) != len(config.aux_weights):
            raise ConfigurationError("one auxiliary weight per modality prediction is required")
        for weight, scores in zip(config.aux_weights, prediction.per_modality):
            term = _criterion(scores, target, False, ignore_value)
            aux.append(term)
            total = total + weight * term
    else:
        aux = [torch.zeros((), dtype=prediction.scores.dtype) for _ in config.aux_weights]
    return LossBreakdown(objective=objective, aux=aux, total=total)

"""Variable-length batching with padding masks and per-channel normalization.

Padded positions are zero-filled, carry date sentinel -1, and mask False.
Downstream operators must consume the mask, never the sentinel; nothing may
read padded positions.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import torch

from .types import DatasetManifest, MultimodalSample, ValidationError

DATE_PAD = -1


@dataclass(frozen=True)
class Batch:
    """Padded per-modality tensors plus masks, dates, and annotations.

    `data[m]` has shape (B, T_m, C_m, *spatial) where spatial is (H, W) for
    patch batches and (S,) for parcel pixel-set batches. `mask[m]` is a bool
    (B, T_m) tensor, True at real acquisitions.
    """

    data: list[torch.Tensor]
    mask: list[torch.Tensor]
    dates: list[torch.Tensor]
    patch_ids: list[str]
    semantic: torch.Tensor | None = None
    instances: torch.Tensor | None = None
    labels: torch.Tensor | None = None

    @property
    def n_modalities(self) -> int:
        return len(self.data)

    @property
    def size(self) -> int:
        return self.data[0].shape[0]

    def to(self, dtype: torch.dtype) -> "Batch":
        return replace(self, data=[d.to(dtype) for d in self.data])


def collate(samples: list[MultimodalSample]) -> Batch:
    """Stack samples into a padded batch, preserving order."""
    if not samples:
        raise ValidationError("cannot collate an empty sample list")
    n_mod = samples[0].n_modalities
    shapes = {(s.n_modalities, *(mod.data.shape[1:] for mod in s.modalities)) for s in samples}
    if len(shapes) != 1:
        raise ValidationError(f"samples disagree on modality/channel/spatial shapes: {shapes}")

    data, mask, dates = [], [], []
    for m in range(n_mod):
        lengths = [s.modalities[m].n_steps for s in samples]
        t_max = max(lengths)
        tail = samples[0].modalities[m].data.shape[1:]
        stacked = np.zeros((len(samples), t_max, *tail), dtype=np.float32)
        date_arr = np.full((len(samples), t_max), DATE_PAD, dtype=np.int64)
        mask_arr = np.zeros((len(samples), t_max), dtype=bool)
        for b, s in enumerate(samples):
            t = lengths[b]
            stacked[b, :t] = s.modalities[m].data
            date_arr[b, :t] = s.modalities[m].dates
            mask_arr[b, :t] = True
        data.append(torch.from_numpy(stacked))
        dates.append(torch.from_numpy(date_arr))
        mask.append(torch.from_numpy(mask_arr))

    semantic = torch.from_numpy(np.stack([s.annotations.semantic for s in samples]).astype(np.int64))
    instances = torch.from_numpy(np.stack([s.annotations.instances for s in samples]).astype(np.int64))
    return Batch(
        data=data,
        mask=mask,
        dates=dates,
        patch_ids=[s.patch_id for s in samples],
        semantic=semantic,
        instances=instances,
    )


def normalize(batch: Batch, manifest: DatasetManifest) -> Batch:
    """Standardize each channel with manifest statistics; padding stays zero."""
    if len(manifest.channel_stats) != batch.n_modalities:
        raise ValidationError("manifest statistics do not match batch modalities")
    out = []
    for m in range(batch.n_modalities):
        stats = manifest.channel_stats[m]
        x = batch.data[m]
        shape = (1, 1, x.shape[2]) + (1,) * (x.ndim - 3)
        mean = torch.as_tensor(stats["mean"], dtype=x.dtype).reshape(shape)
        std = torch.as_tensor(stats["std"], dtype=x.dtype).reshape(shape)
        keep = batch.mask[m].reshape(batch.size, -1, *([1] * (x.ndim - 2))).to(x.dtype)
        out.append((x - mean) / std * keep)
    return replace(batch, data=out)

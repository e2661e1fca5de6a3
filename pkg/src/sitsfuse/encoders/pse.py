"""Pixel-set spatial encoder for parcels.

Samples a fixed-size set of parcel pixels (with replacement, shared across
all acquisition dates), lifts each pixel with a small MLP, pools the set by
(mean, std), and maps the pooled statistics to one embedding per date.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from ..data.types import ModalitySeries


@dataclass(frozen=True)
class PixelSetConfig:
    n_pixels: int = 32
    pixel_mlp: tuple[int, ...] = (32, 64)
    out_mlp: tuple[int, ...] = (64,)

    @property
    def out_width(self) -> int:
        return self.out_mlp[-1]

    def validate(self) -> None:
        if self.n_pixels <= 0 or any(w <= 0 for w in self.pixel_mlp + self.out_mlp):
            raise ValueError("pixel-set widths and sample size must be positive")


def sample_pixel_set(
    data: np.ndarray, instance_mask: np.ndarray, n_pixels: int, rng: np.random.Generator
) -> np.ndarray:
    """Draw `n_pixels` parcel pixels with replacement; returns (T, C, S).

    The same pixel sample is used for every acquisition date.
    """
    ys, xs = np.nonzero(instance_mask)
    if ys.size == 0:
        raise ValueError("cannot sample pixels from an empty instance")
    pick = rng.integers(0, ys.size, size=n_pixels)
    return data[:, :, ys[pick], xs[pick]]


class PixelSetEncoder(nn.Module):
    """Maps pixel sets (B, T, C, S) to per-date embeddings (B, T, F)."""

    def __init__(self, in_channels: int, config: PixelSetConfig = PixelSetConfig()):
        super().__init__()
        config.validate()
        self.config = config
        self.in_channels = in_channels
        self.pixel_mlp = _mlp(in_channels, config.pixel_mlp, trailing_relu=True)
        self.out_mlp = _mlp(2 * config.pixel_mlp[-1], config.out_mlp, trailing_relu=False)

    @property
    def out_width(self) -> int:
        return self.config.out_width

    def forward(self, pixel_sets: torch.Tensor) -> torch.Tensor:
        x = pixel_sets.transpose(2, 3)  # (B, T, S, C)
        feats = self.pixel_mlp(x)  # (B, T, S, D)
        mean = feats.mean(dim=2)
        var = ((feats - mean.unsqueeze(2)) ** 2).mean(dim=2)
        # sqrt has infinite slope at 0; identical pixel sets (padded or
        # dropped dates are all-zero) must yield std 0 with a finite gradient
        positive = var > 0
        std = torch.where(positive, torch.sqrt(torch.where(positive, var, torch.ones_like(var))), torch.zeros_like(var))
        return self.out_mlp(torch.cat([mean, std], dim=-1))

    def encode_series(
        self, series: ModalitySeries, instance_mask: np.ndarray, rng: np.random.Generator
    ) -> torch.Tensor:
        """Encode one parcel of one series into a (T, F) sequence."""
        pixels = sample_pixel_set(series.data, instance_mask, self.config.n_pixels, rng)
        dtype = next(self.parameters()).dtype
        batched = torch.from_numpy(pixels).to(dtype).unsqueeze(0)
        return self.forward(batched).squeeze(0)


def _mlp(in_width: int, widths: tuple[int, ...], trailing_relu: bool) -> nn.Sequential:
    layers: list[nn.Module] = []
    prev = in_width
    for i, w in enumerate(widths):
        layers.append(nn.Linear(prev, w))
        if i < len(widths) - 1 or trailing_relu:
            layers.append(nn.ReLU())
        prev = w
    return nn.Sequential(*layers)

"""U-shaped spatio-temporal encoder for pixelwise tasks.

Five stages: (i) a shared per-date convolutional pyramid, (ii) masked
temporal attention at the coarsest resolution, run independently per pixel,
(iii) bilinear up-sampling of the attention maps to every pyramid level,
(iv) attention-weighted temporal averaging with head/channel-group pairing
merged by a 1x1 convolution, and (v) a convolutional decoder with skip
concatenation up to full resolution.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn
from torch.nn import functional as F

from .ltae import AttentionMaps, LTAEConfig, TemporalAttentionCore


@dataclass(frozen=True)
class UTAEConfig:
    level_widths: tuple[int, ...] = (32, 64, 128)
    n_heads: int = 4
    d_k: int = 8

    @property
    def n_levels(self) -> int:
        return len(self.level_widths)

    def validate(self) -> None:
        if not self.level_widths:
            raise ValueError("need at least one pyramid level")
        for w in self.level_widths:
            if w % self.n_heads != 0:
                raise ValueError(f"level width {w} not divisible by {self.n_heads} attention heads")
        inner_group = self.level_widths[-1] // self.n_heads
        if inner_group % 2 != 0:
            raise ValueError("innermost channel group must have even width for the positional encoding")


@dataclass
class UTAEOutput:
    """Per-level maps: f = temporally collapsed, d = decoded; full_res is d0."""

    features: list[torch.Tensor]
    decoded: list[torch.Tensor]
    full_res: torch.Tensor
    attention: list[AttentionMaps]  # per level, innermost last


class UTAE(nn.Module):
    """Encodes (B, T, C, H, W) with a (B, T) mask into multi-scale maps."""

    def __init__(self, in_channels: int, config: UTAEConfig = UTAEConfig()):
        super().__init__()
        config.validate()
        self.config = config
        widths = config.level_widths
        self.stages = nn.ModuleList()
        prev = in_channels
        for w in widths:
            self.stages.append(
                nn.Sequential(
                    nn.Conv2d(prev, w, kernel_size=3, stride=2, padding=1),
                    nn.ReLU(),
                    nn.Conv2d(w, w, kernel_size=3, padding=1),
                    nn.ReLU(),
                )
            )
            prev = w
        self.core = TemporalAttentionCore(
            LTAEConfig(width=widths[-1], n_heads=config.n_heads, d_k=config.d_k)
        )
        self.merge = nn.ModuleList([nn.Conv2d(w, w, kernel_size=1) for w in widths])
        self.up = nn.ModuleList(
            [nn.ConvTranspose2d(widths[l + 1], widths[l], kernel_size=2, stride=2) for l in range(len(widths) - 1)]
        )
        self.decode = nn.ModuleList(
            [
                nn.Sequential(nn.Conv2d(2 * widths[l], widths[l], kernel_size=3, padding=1), nn.ReLU())
                for l in range(len(widths) - 1)
            ]
        )
        self.final_up = nn.Sequential(
            nn.ConvTranspose2d(widths[0], widths[0], kernel_size=2, stride=2),
            nn.ReLU(),
            nn.Conv2d(widths[0], widths[0], kernel_size=3, padding=1),
        )

    @property
    def out_width(self) -> int:
        return self.config.level_widths[0]

    def forward(self, x: torch.Tensor, dates: torch.Tensor, mask: torch.Tensor) -> UTAEOutput:
        b, t, c, h, w = x.shape
        levels = self.config.n_levels
        if h % (2**levels) or w % (2**levels):
            raise ValueError(f"spatial dims ({h}, {w}) must be divisible by 2^{levels}")

        maps = []
        cur = x.reshape(b * t, c, h, w)
        for stage in self.stages:
            cur = stage(cur)
            maps.append(cur.reshape(b, t, *cur.shape[1:]))

        inner = maps[-1]
        _, _, e_width, ih, iw = inner.shape
        seq = inner.permute(0, 3, 4, 1, 2).reshape(b * ih * iw, t, e_width)
        px_dates = dates.unsqueeze(1).expand(b, ih * iw, t).reshape(-1, t)
        px_mask = mask.unsqueeze(1).expand(b, ih * iw, t).reshape(-1, t)
        _, attn = self.core.attend(seq, px_dates, px_mask)
        attn = attn.reshape(b, ih, iw, self.config.n_heads, t).permute(0, 3, 4, 1, 2)

        features, attention = [], []
        for l, e_l in enumerate(maps):
            a_l = self._resize_attention(attn, e_l.shape[-2:])
            g = self.config.n_heads
            grouped = e_l.reshape(b, t, g, e_l.shape[2] // g, *e_l.shape[-2:])
            pooled = torch.einsum("bgthw,btgchw->bgchw", a_l, grouped)
            pooled = pooled.reshape(b, e_l.shape[2], *e_l.shape[-2:])
            features.append(self.merge[l](pooled))
            attention.append(AttentionMaps(a_l))

        decoded = [None] * levels
        decoded[-1] = features[-1]
        for l in range(levels - 2, -1, -1):
            upped = self.up[l](decoded[l + 1])
            decoded[l] = self.decode[l](torch.cat([upped, features[l]], dim=1))
        full_res = self.final_up(decoded[0])
        return UTAEOutput(features=features, decoded=decoded, full_res=full_res, attention=attention)

    def _resize_attention(self, attn: torch.Tensor, size: tuple[int, int]) -> torch.Tensor:
        b, g, t, ih, iw = attn.shape
        if (ih, iw) == tuple(size):
            return attn
        flat = attn.reshape(b, g * t, ih, iw)
        resized = F.interpolate(flat, size=size, mode="bilinear", align_corners=False)
        return resized.reshape(b, g, t, *size)

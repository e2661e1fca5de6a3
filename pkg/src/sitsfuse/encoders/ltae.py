"""Lightweight temporal attention encoder with learned master queries.

Each head attends to a dedicated channel group of the input sequence; the
query is learned per head rather than derived from the sequence, so a
whole time series collapses into a single embedding. Masked positions get
-inf compatibility before the softmax, which keeps both their attention
weight and their gradient at exactly zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn

from .positional import positional_encoding


@dataclass(frozen=True)
class LTAEConfig:
    width: int = 64  # input embedding width E, split across heads
    n_heads: int = 4
    d_k: int = 8
    out_mlp: tuple[int, ...] = (64,)

    @property
    def group_width(self) -> int:
        return self.width // self.n_heads

    @property
    def out_width(self) -> int:
        return self.out_mlp[-1]

    def validate(self) -> None:
        if self.width % self.n_heads != 0:
            raise ValueError(f"width {self.width} not divisible by {self.n_heads} heads")
        if self.group_width % 2 != 0:
            raise ValueError("per-head channel group must have even width for the positional encoding")
        if self.d_k <= 0:
            raise ValueError("d_k must be positive")


@dataclass(frozen=True)
class AttentionMaps:
    """Per-head temporal attention weights.

    `weights` is (B, G, T) for sequence inputs or (B, G, T, H, W) for
    pixelwise maps; `time_axis` marks the temporal dimension. For every
    head and pixel the weights sum to one over the unmasked temporal axis
    and are exactly zero at masked positions.
    """

    weights: torch.Tensor
    time_axis: int = 2

    def temporal_sums(self) -> torch.Tensor:
        return self.weights.sum(dim=self.time_axis)


class MaskedSequenceError(ValueError):
    """Raised when a sequence has no unmasked step to attend to."""


class TemporalAttentionCore(nn.Module):
    """Key/query compatibilities and masked attention over channel groups."""

    def __init__(self, config: LTAEConfig):
        super().__init__()
        config.validate()
        self.config = config
        g, gw, dk = config.n_heads, config.group_width, config.d_k
        self.query = nn.Parameter(torch.empty(g, dk))
        self.key_weight = nn.Parameter(torch.empty(g, gw, dk))
        self.key_bias = nn.Parameter(torch.empty(g, dk))

    def grouped(self, x: torch.Tensor, dates: torch.Tensor) -> torch.Tensor:
        """Split (N, T, E) into head groups with the date encoding added."""
        n, t, _ = x.shape
        cfg = self.config
        pe = positional_encoding(dates, cfg.group_width, dtype=x.dtype)
        return x.reshape(n, t, cfg.n_heads, cfg.group_width) + pe.unsqueeze(2)

    def scores(self, grouped: torch.Tensor) -> torch.Tensor:
        """Compatibility z = <q, k(x)> / sqrt(d_k), shape (N, G, T)."""
        keys = torch.einsum("ntgc,gck->ntgk", grouped, self.key_weight) + self.key_bias
        return torch.einsum("gk,ntgk->ngt", self.query, keys) / math.sqrt(self.config.d_k)

    def attend(self, x: torch.Tensor, dates: torch.Tensor, mask: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Return (grouped values (N,T,G,GW), attention (N,G,T))."""
        if not bool(mask.any(dim=1).all()):
            raise MaskedSequenceError("every sequence needs at least one unmasked step")
        grouped = self.grouped(x, dates)
        z = self.scores(grouped)
        z = z.masked_fill(~mask.unsqueeze(1), float("-inf"))
        return grouped, torch.softmax(z, dim=-1)


class LTAE(nn.Module):
    """Collapses a masked (N, T, E) sequence into one (N, F) embedding."""

    def __init__(self, config: LTAEConfig = LTAEConfig()):
        super().__init__()
        self.config = config
        self.core = TemporalAttentionCore(config)
        widths = config.out_mlp
        layers: list[nn.Module] = []
        prev = config.width
        for i, w in enumerate(widths):
            layers.append(nn.Linear(prev, w))
            if i < len(widths) - 1:
                layers.append(nn.ReLU())
            prev = w
        self.out_mlp = nn.Sequential(*layers)

    @property
    def out_width(self) -> int:
        return self.config.out_width

    def forward(
        self, x: torch.Tensor, dates: torch.Tensor, mask: torch.Tensor
    ) -> tuple[torch.Tensor, AttentionMaps]:
        grouped, attn = self.core.attend(x, dates, mask)
        pooled = torch.einsum("ngt,ntgc->ngc", attn, grouped)
        out = self.out_mlp(pooled.reshape(x.shape[0], self.config.width))
        return out, AttentionMaps(attn)

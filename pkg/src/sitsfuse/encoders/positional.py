"""Sinusoidal day-of-year positional encoding."""

from __future__ import annotations

import torch

PE_BASE = 1000.0


def positional_encoding(dates: torch.Tensor, width: int, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """Encode integer dates into `width` sinusoidal features.

    Output[..., 2i] = sin(d / base^(2i/width)), output[..., 2i+1] the cosine,
    so day 0 maps to (0, 1, 0, 1, ...). Injective on [1, 366] for width >= 8.
    Accepts any leading batch shape; returns shape (*dates.shape, width).
    """
    if width % 2 != 0:
        raise ValueError(f"positional encoding width must be even, got {width}")
    d = dates.to(dtype)
    i = torch.arange(width // 2, dtype=dtype, device=d.device)
    denom = PE_BASE ** (2.0 * i / width)
    angle = d.unsqueeze(-1) / denom
    out = torch.empty(*dates.shape, width, dtype=dtype, device=d.device)
    out[..., 0::2] = torch.sin(angle)
    out[..., 1::2] = torch.cos(angle)
    return out

"""Composed trainable models for each (fusion scheme, task) pair.

Every model consumes a padded `Batch` and returns a `Prediction`; the
`module_map` partitions all parameters into named groups (spatial encoders,
temporal encoders, decoders, per modality) for the gradient-flow probe.
"""

from __future__ import annotations

import numpy as np
import torch
from torch import nn

from . import MODALITY_NAMES
from .data.batch import Batch
from .encoders.ltae import LTAE, LTAEConfig, TemporalAttentionCore
from .encoders.pse import PixelSetConfig, PixelSetEncoder
from .encoders.utae import UTAE, UTAEConfig
from .fusion import (
    ConfigurationError,
    FusionConfig,
    Prediction,
    decision_fuse,
    early_fuse_batch,
    late_fuse,
    mid_fuse,
)
from .seeding import rng_stream

TASKS = ("parcel", "semantic")


def modality_name(m: int) -> str:
    return MODALITY_NAMES[m] if m < len(MODALITY_NAMES) else f"M{m}"


class ClassificationHead(nn.Module):
    """Two-layer MLP decoder producing class logits."""

    def __init__(self, in_width: int, n_classes: int, hidden: int = 64):
        super().__init__()
        self.net = nn.Sequential(nn.Linear(in_width, hidden), nn.ReLU(), nn.Linear(hidden, n_classes))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x)


class SegmentationHead(nn.Module):
    """Two-layer 1x1 convolutional decoder producing per-pixel logits."""

    def __init__(self, in_width: int, n_classes: int, hidden: int = 64):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv2d(in_width, hidden, kernel_size=1), nn.ReLU(), nn.Conv2d(hidden, n_classes, kernel_size=1)
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x)


# ---------------------------------------------------------------------------
# parcel classification models
# ---------------------------------------------------------------------------

class SingleParcelModel(nn.Module):
    def __init__(self, modality: int, in_channels: int, pse: PixelSetConfig, ltae: LTAEConfig, n_classes: int, hidden: int):
        super().__init__()
        self.modality = modality
        self.pse = PixelSetEncoder(in_channels, pse)
        self.ltae = LTAE(ltae)
        self.head = ClassificationHead(ltae.out_width, n_classes, hidden)

    def forward(self, batch: Batch) -> Prediction:
        m = self.modality
        seq = self.pse(batch.data[m])
        emb, _ = self.ltae(seq, batch.dates[m], batch.mask[m])
        return Prediction(self.head(emb))

    def module_map(self) -> dict[str, nn.Module]:
        name = modality_name(self.modality)
        return {f"pse_{name}": self.pse, f"ltae_{name}": self.ltae, "decoder": self.head}


class EarlyParcelModel(nn.Module):
    def __init__(self, channels: tuple[int, ...], target: int, pse: PixelSetConfig, ltae: LTAEConfig, n_classes: int, hidden: int):
        super().__init__()
        self.target = target
        self.pse = PixelSetEncoder(sum(channels), pse)
        self.ltae = LTAE(ltae)
        self.head = ClassificationHead(ltae.out_width, n_classes, hidden)

    def forward(self, batch: Batch) -> Prediction:
        data, dates, mask = early_fuse_batch(batch, self.target)
        emb, _ = self.ltae(self.pse(data), dates, mask)
        return Prediction(self.head(emb))

    def module_map(self) -> dict[str, nn.Module]:
        return {"pse": self.pse, "ltae": self.ltae, "decoder": self.head}


class MidParcelModel(nn.Module):
    def __init__(self, channels: tuple[int, ...], pse: PixelSetConfig, ltae: LTAEConfig, n_classes: int, hidden: int, aux: bool):
        super().__init__()
        self.pse = nn.ModuleList(PixelSetEncoder(c, pse) for c in channels)
        self.ltae = LTAE(ltae)
        self.head = ClassificationHead(ltae.out_width, n_classes, hidden)
        self.aux_ltae = nn.ModuleList(LTAE(ltae) for _ in channels) if aux else None
        self.aux_head = (
            nn.ModuleList(ClassificationHead(ltae.out_width, n_classes, hidden) for _ in channels) if aux else None
        )

    def forward(self, batch: Batch) -> Prediction:
        seqs = [self.pse[m](batch.data[m]) for m in range(batch.n_modalities)]
        merged, days, mask = mid_fuse(seqs, batch.dates, batch.mask)
        emb, _ = self.ltae(merged, days, mask)
        per_modality = None
        if self.aux_ltae is not None:
            per_modality = []
            for m, seq in enumerate(seqs):
                aux_emb, _ = self.aux_ltae[m](seq, batch.dates[m], batch.mask[m])
                per_modality.append(self.aux_head[m](aux_emb))
        return Prediction(self.head(emb), per_modality=per_modality)

    def module_map(self) -> dict[str, nn.Module]:
        out = {f"pse_{modality_name(m)}": enc for m, enc in enumerate(self.pse)}
        out["ltae"] = self.ltae
        out["decoder"] = self.head
        if self.aux_ltae is not None:
            for m in range(len(self.aux_ltae)):
                out[f"aux_ltae_{modality_name(m)}"] = self.aux_ltae[m]
                out[f"aux_decoder_{modality_name(m)}"] = self.aux_head[m]
        return out


class LateParcelModel(nn.Module):
    def __init__(self, channels: tuple[int, ...], pse: PixelSetConfig, ltae: LTAEConfig, n_classes: int, hidden: int, aux: bool):
        super().__init__()
        self.pse = nn.ModuleList(PixelSetEncoder(c, pse) for c in channels)
        self.ltae = nn.ModuleList(LTAE(ltae) for _ in channels)
        self.head = ClassificationHead(ltae.out_width * len(channels), n_classes, hidden)
        self.aux_head = (
            nn.ModuleList(ClassificationHead(ltae.out_width, n_classes, hidden) for _ in channels) if aux else None
        )

    def forward(self, batch: Batch) -> Prediction:
        embs = []
        for m in range(batch.n_modalities):
            emb, _ = self.ltae[m](self.pse[m](batch.data[m]), batch.dates[m], batch.mask[m])
            embs.append(emb)
        per_modality = None
        if self.aux_head is not None:
            per_modality = [self.aux_head[m](embs[m]) for m in range(len(embs))]
        return Prediction(self.head(late_fuse(embs)), per_modality=per_modality)

    def module_map(self) -> dict[str, nn.Module]:
        out = {}
        for m in range(len(self.pse)):
            out[f"pse_{modality_name(m)}"] = self.pse[m]
            out[f"ltae_{modality_name(m)}"] = self.ltae[m]
        out["decoder"] = self.head
        if self.aux_head is not None:
            for m in range(len(self.aux_head)):
                out[f"aux_decoder_{modality_name(m)}"] = self.aux_head[m]
        return out


class DecisionParcelModel(nn.Module):
    def __init__(self, channels: tuple[int, ...], pse: PixelSetConfig, ltae: LTAEConfig, n_classes: int, hidden: int):
        super().__init__()
        self.pse = nn.ModuleList(PixelSetEncoder(c, pse) for c in channels)
        self.ltae = nn.ModuleList(LTAE(ltae) for _ in channels)
        self.head = nn.ModuleList(ClassificationHead(ltae.out_width, n_classes, hidden) for _ in channels)

    def forward(self, batch: Batch) -> Prediction:
        preds = []
        for m in range(batch.n_modalities):
            emb, _ = self.ltae[m](self.pse[m](batch.data[m]), batch.dates[m], batch.mask[m])
            preds.append(Prediction(self.head[m](emb)))
        return decision_fuse(preds)

    def module_map(self) -> dict[str, nn.Module]:
        out = {}
        for m in range(len(self.pse)):
            out[f"pse_{modality_name(m)}"] = self.pse[m]
            out[f"ltae_{modality_name(m)}"] = self.ltae[m]
            out[f"decoder_{modality_name(m)}"] = self.head[m]
        return out


# ---------------------------------------------------------------------------
# semantic segmentation models
# ---------------------------------------------------------------------------

class SingleSegModel(nn.Module):
    def __init__(self, modality: int, in_channels: int, utae: UTAEConfig, n_out: int, hidden: int):
        super().__init__()
        self.modality = modality
        self.utae = UTAE(in_channels, utae)
        self.head = SegmentationHead(self.utae.out_width, n_out, hidden)

    def forward(self, batch: Batch) -> Prediction:
        m = self.modality
        out = self.utae(batch.data[m], batch.dates[m], batch.mask[m])
        return Prediction(self.head(out.full_res))

    def module_map(self) -> dict[str, nn.Module]:
        name = modality_name(self.modality)
        return {f"utae_{name}": self.utae, "decoder": self.head}


class EarlySegModel(nn.Module):
    def __init__(self, channels: tuple[int, ...], target: int, utae: UTAEConfig, n_out: int, hidden: int):
        super().__init__()
        self.target = target
        self.utae = UTAE(sum(channels), utae)
        self.head = SegmentationHead(self.utae.out_width, n_out, hidden)

    def forward(self, batch: Batch) -> Prediction:
        data, dates, mask = early_fuse_batch(batch, self.target)
        out = self.utae(data, dates, mask)
        return Prediction(self.head(out.full_res))

    def module_map(self) -> dict[str, nn.Module]:
        return {"utae": self.utae, "decoder": self.head}


class LateSegModel(nn.Module):
    def __init__(self, channels: tuple[int, ...], utae: UTAEConfig, n_out: int, hidden: int, aux: bool):
        super().__init__()
        self.utae = nn.ModuleList(UTAE(c, utae) for c in channels)
        width = self.utae[0].out_width
        self.head = SegmentationHead(width * len(channels), n_out, hidden)
        self.aux_head = nn.ModuleList(SegmentationHead(width, n_out, hidden) for _ in channels) if aux else None

    def forward(self, batch: Batch) -> Prediction:
        maps = []
        for m in range(batch.n_modalities):
            maps.append(self.utae[m](batch.data[m], batch.dates[m], batch.mask[m]).full_res)
        per_modality = None
        if self.aux_head is not None:
            per_modality = [self.aux_head[m](maps[m]) for m in range(len(maps))]
        return Prediction(self.head(torch.cat(maps, dim=1)), per_modality=per_modality)

    def module_map(self) -> dict[str, nn.Module]:
        out = {f"utae_{modality_name(m)}": enc for m, enc in enumerate(self.utae)}
        out["decoder"] = self.head
        if self.aux_head is not None:
            for m in range(len(self.aux_head)):
                out[f"aux_decoder_{modality_name(m)}"] = self.aux_head[m]
        return out


class DecisionSegModel(nn.Module):
    def __init__(self, channels: tuple[int, ...], utae: UTAEConfig, n_out: int, hidden: int):
        super().__init__()
        self.utae = nn.ModuleList(UTAE(c, utae) for c in channels)
        self.head = nn.ModuleList(SegmentationHead(self.utae[0].out_width, n_out, hidden) for _ in channels)

    def forward(self, batch: Batch) -> Prediction:
        preds = []
        for m in range(batch.n_modalities):
            out = self.utae[m](batch.data[m], batch.dates[m], batch.mask[m])
            preds.append(Prediction(self.head[m](out.full_res)))
        return decision_fuse(preds)

    def module_map(self) -> dict[str, nn.Module]:
        out = {}
        for m in range(len(self.utae)):
            out[f"utae_{modality_name(m)}"] = self.utae[m]
            out[f"decoder_{modality_name(m)}"] = self.head[m]
        return out


# ---------------------------------------------------------------------------
# construction
# ---------------------------------------------------------------------------

def validate_combination(task: str, fusion: FusionConfig) -> None:
    """Reject illegal (scheme, task, enhancement) combinations by rule."""
    if task not in TASKS:
        raise ConfigurationError(f"unknown task {task!r}, expected one of {TASKS}")
    if fusion.scheme == "mid" and task == "semantic":
        raise ConfigurationError(
            "mid fusion is not available for semantic segmentation: the pixelwise "
            "encoder interleaves spatial and temporal encoding, so there is no "
            "standalone feature sequence to stack"
        )
    if fusion.scheme == "early" and fusion.aux_enabled:
        raise ConfigurationError(
            "auxiliary supervision with early fusion would duplicate the whole network; disable one of the two"
        )
    if fusion.scheme == "single" and fusion.aux_enabled:
        raise ConfigurationError("auxiliary supervision needs a multimodal fusion scheme")


def build_model(
    task: str,
    fusion: FusionConfig,
    channels: tuple[int, ...],
    n_classes: int,
    pse: PixelSetConfig = PixelSetConfig(),
    ltae: LTAEConfig = LTAEConfig(),
    utae: UTAEConfig = UTAEConfig(),
    head_hidden: int = 64,
    seed: int = 0,
    dtype: torch.dtype = torch.float32,
) -> nn.Module:
    """Compose a trainable model for a legal (scheme, task) pair.

    Parcel models predict the crop classes; semantic models predict crops
    plus the background class. Illegal combinations raise
    ConfigurationError naming the violated rule.
    """
    fusion.validate(len(channels))
    validate_combination(task, fusion)
    scheme = fusion.scheme

    if task == "parcel":
        if ltae.width != pse.out_width:
            raise ConfigurationError(
                f"temporal encoder width {ltae.width} must match pixel-set output width {pse.out_width}"
            )
        if scheme == "single":
            model = SingleParcelModel(fusion.single_modality, channels[fusion.single_modality], pse, ltae, n_classes, head_hidden)
        elif scheme == "early":
            model = EarlyParcelModel(channels, fusion.interp_target, pse, ltae, n_classes, head_hidden)
        elif scheme == "mid":
            model = MidParcelModel(channels, pse, ltae, n_classes, head_hidden, fusion.aux_enabled)
        elif scheme == "late":
            model = LateParcelModel(channels, pse, ltae, n_classes, head_hidden, fusion.aux_enabled)
        else:
            model = DecisionParcelModel(channels, pse, ltae, n_classes, head_hidden)
    else:
        n_out = n_classes + 1  # crop classes plus background
        if scheme == "single":
            model = SingleSegModel(fusion.single_modality, channels[fusion.single_modality], utae, n_out, head_hidden)
        elif scheme == "early":
            model = EarlySegModel(channels, fusion.interp_target, utae, n_out, head_hidden)
        elif scheme == "late":
            model = LateSegModel(channels, utae, n_out, head_hidden, fusion.aux_enabled)
        else:
            model = DecisionSegModel(channels, utae, n_out, head_hidden)

    init_parameters(model, seed)
    return model.to(dtype)


def init_parameters(model: nn.Module, seed: int) -> nn.Module:
    """Fan-in-scaled uniform init drawn from a named stream, for cross-run determinism."""
    rng = rng_stream(seed, "init")
    for _, module in model.named_modules():
        if isinstance(module, nn.Linear):
            bound = 1.0 / np.sqrt(module.in_features)
            _fill(module.weight, bound, rng)
            _fill(module.bias, bound, rng)
        elif isinstance(module, (nn.Conv2d, nn.ConvTranspose2d)):
            k = module.kernel_size[0] * module.kernel_size[1]
            bound = 1.0 / np.sqrt(module.in_channels * k)
            _fill(module.weight, bound, rng)
            if module.bias is not None:
                _fill(module.bias, bound, rng)
        elif isinstance(module, TemporalAttentionCore):
            _fill(module.query, 1.0 / np.sqrt(module.config.d_k), rng)
            group_bound = 1.0 / np.sqrt(module.config.group_width)
            _fill(module.key_weight, group_bound, rng)
            _fill(module.key_bias, group_bound, rng)
    return model


def _fill(param: torch.Tensor, bound: float, rng: np.random.Generator) -> None:
    values = rng.uniform(-bound, bound, size=tuple(param.shape))
    with torch.no_grad():
        param.copy_(torch.from_numpy(values).to(param.dtype))


def parameter_count(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def check_module_map(model: nn.Module) -> None:
    """Assert the module map partitions the model's parameters exactly."""
    seen: set[int] = set()
    total = 0
    for name, module in model.module_map().items():
        for p in module.parameters():
            if id(p) in seen:
                raise ConfigurationError(f"parameter shared across module-map entries at {name}")
            seen.add(id(p))
            total += p.numel()
    if total != parameter_count(model):
        raise ConfigurationError("module map does not cover every parameter")

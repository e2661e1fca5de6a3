"""Shared fixtures: small deterministic datasets and desk-scale configs."""

from __future__ import annotations

import numpy as np
import pytest
import torch

from sitsfuse.data.types import AnnotationSet, ModalitySeries, MultimodalSample
from sitsfuse.encoders.ltae import LTAEConfig
from sitsfuse.encoders.pse import PixelSetConfig
from sitsfuse.encoders.utae import UTAEConfig
from sitsfuse.synthgen import SynthConfig, generate_dataset
from sitsfuse.tasks import SitsDataset

TINY_PSE = PixelSetConfig(n_pixels=8, pixel_mlp=(8, 12), out_mlp=(12,))
TINY_LTAE = LTAEConfig(width=12, n_heads=2, d_k=4, out_mlp=(12,))
TINY_UTAE = UTAEConfig(level_widths=(4, 8, 8), n_heads=2, d_k=4)

SMALL_PSE = PixelSetConfig(n_pixels=16, pixel_mlp=(16, 32), out_mlp=(32,))
SMALL_LTAE = LTAEConfig(width=32, n_heads=4, d_k=8, out_mlp=(32,))


def make_sample(patch_id: str = "p0", seed: int = 0, h: int = 16, w: int = 16, n_classes: int = 6) -> MultimodalSample:
    """Hand-rolled sample with 2 parcels; modality 0 has 4 channels."""
    rng = np.random.default_rng(seed)
    channels = (4, 3, 3)
    steps = (5, 8, 7)
    modalities = []
    for m, (c, t) in enumerate(zip(channels, steps)):
        dates = np.sort(rng.choice(np.arange(1, 367), size=t, replace=False)).astype(np.int32)
        data = rng.normal(0.5, 0.2, size=(t, c, h, w)).astype(np.float32)
        modalities.append(ModalitySeries(m, data, dates))
    instances = np.zeros((h, w), dtype=np.int32)
    instances[1 : h // 2, 1 : w // 2] = 1
    instances[h // 2 + 1 : h - 1, w // 2 + 1 : w - 1] = 2
    labels = {1: 0, 2: 3}
    semantic = np.full((h, w), n_classes, dtype=np.int32)  # background
    semantic[instances == 1] = labels[1]
    semantic[instances == 2] = labels[2]
    return MultimodalSample(patch_id, modalities, AnnotationSet(semantic, instances, labels))


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory) -> SitsDataset:
    """16 small patches for fast train/eval tests."""
    root = tmp_path_factory.mktemp("tiny_ds")
    config = SynthConfig(
        n_patches=16, height=16, width=16, seed=101,
        optical_steps=(6, 8), radar_steps=(9, 12),
        cloud_rate=0.2, speckle_scale=0.2,
    )
    generate_dataset(config, root)
    return SitsDataset.load(root)


@pytest.fixture(scope="session")
def tiny_config() -> SynthConfig:
    return SynthConfig(
        n_patches=16, height=16, width=16, seed=101,
        optical_steps=(6, 8), radar_steps=(9, 12),
        cloud_rate=0.2, speckle_scale=0.2,
    )


def to_double(batch):
    return batch.to(torch.float64)

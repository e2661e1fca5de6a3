"""Deterministic toy multimodal time-series dataset generator.

Patches are tessellated into parcels, each parcel class renders per-pixel
temporal curves per modality, optical acquisitions can be occluded
patch-wide, and radar channels carry multiplicative speckle-like noise.
Class temporal profiles are designed so that some class pairs are only
separable by one modality, which makes modality-fusion benefits and
cloud-robustness claims directly checkable on the generated data.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .data.folds import make_folds
from .data.io import save_manifest, save_sample
from .data.types import AnnotationSet, DatasetManifest, ModalitySeries, MultimodalSample, background_class
from .seeding import rng_stream

PLANS = ("paired", "optical_dominant")

DAYS_IN_YEAR = 366


@dataclass(frozen=True)
class SynthConfig:
    """Generator knobs. The whole dataset is a pure function of this config."""

    n_patches: int = 60
    height: int = 32
    width: int = 32
    n_classes: int = 6
    channels: tuple[int, ...] = (4, 3, 3)
    optical_steps: tuple[int, int] = (8, 12)
    radar_steps: tuple[int, int] = (18, 24)
    cloud_rate: float = 0.2
    speckle_scale: float = 0.25
    plan: str = "paired"
    pixel_jitter: float = 0.05
    acq_noise: float = 0.02
    min_parcels: int = 4
    max_parcels: int = 10
    seed: int = 0

    def validate(self) -> None:
        if self.n_patches <= 0 or self.height <= 0 or self.width <= 0:
            raise ValueError("n_patches, height, width must be positive")
        if self.n_classes < 6:
            raise ValueError("the complementarity design needs at least 6 classes")
        if not 0.0 <= self.cloud_rate <= 1.0:
            raise ValueError(f"cloud_rate must be in [0, 1], got {self.cloud_rate}")
        if self.plan not in PLANS:
            raise ValueError(f"unknown complementarity plan {self.plan!r}, expected one of {PLANS}")
        if len(self.channels) < 2:
            raise ValueError("need at least an optical and one radar modality")

    @property
    def n_modalities(self) -> int:
        return len(self.channels)


@dataclass(frozen=True)
class ClassProfile:
    """Per-modality, per-channel temporal curves: a sum of two Gaussian bumps.

    `bumps[m]` has shape (C_m, 2, 3) holding (amplitude, center, width) per
    bump; curve values stay within [0, 2] by construction.
    """

    bumps: tuple[np.ndarray, ...]

    def evaluate(self, modality: int, days: np.ndarray) -> np.ndarray:
        """Curve values for one modality at `days`, shape (C_m, len(days))."""
        params = self.bumps[modality]
        days = np.asarray(days, dtype=np.float64)[None, None, :]
        amp = params[:, :, 0:1]
        center = params[:, :, 1:2]
        width = params[:, :, 2:3]
        return np.sum(amp * np.exp(-0.5 * ((days - center) / width) ** 2), axis=1)


@dataclass(frozen=True)
class PatchMeta:
    """Generation-time facts not stored in the sample itself."""

    occluded_optical: np.ndarray  # bool per optical acquisition


def random_profiles(config: SynthConfig, rng: np.random.Generator) -> list[ClassProfile]:
    """Generic random profiles for every crop class plus the background."""
    profiles = []
    for _ in range(config.n_classes):
        bumps = []
        for c in config.channels:
            amp = rng.uniform(0.4, 1.0, size=(c, 2))
            center = rng.uniform(60.0, 300.0, size=(c, 2))
            width = rng.uniform(15.0, 40.0, size=(c, 2))
            bumps.append(np.stack([amp, center, width], axis=-1))
        profiles.append(ClassProfile(tuple(bumps)))
    profiles.append(_background_profile(config))
    return profiles


def _background_profile(config: SynthConfig) -> ClassProfile:
    bumps = []
    for c in config.channels:
        params = np.zeros((c, 2, 3))
        params[:, :, 0] = 0.15  # flat, low amplitude
        params[:, 0, 1] = 120.0
        params[:, 1, 1] = 260.0
        params[:, :, 2] = 90.0
        bumps.append(params)
    return ClassProfile(tuple(bumps))


def _designed_bumps(n_channels: int, layout: tuple[float, float, float, float]) -> np.ndarray:
    """Two bumps (amp1@center1 + amp2@center2) with a small per-channel shift."""
    amp1, center1, amp2, center2 = layout
    params = np.zeros((n_channels, 2, 3))
    shift = 5.0 * np.arange(n_channels)
    params[:, 0, 0] = amp1
    params[:, 0, 1] = center1 + shift
    params[:, 0, 2] = 40.0  # wide enough that sparse date grids sample the bump
    params[:, 1, 0] = amp2
    params[:, 1, 1] = center2 + shift
    params[:, 1, 2] = 35.0
    return params


# Per-class (amp1, center1, amp2, center2) layouts. Within the designed
# pairs the primary bumps sit >= 60 days apart with an amplitude gap >= 0.5;
# across pairs every two classes differ strongly in at least one modality.
_PAIRED_OPTICAL = {
    0: (1.2, 100.0, 0.4, 260.0),
    1: (1.2, 100.0, 0.4, 260.0),  # identical to class 0: only radar separates them
    2: (1.5, 150.0, 0.3, 40.0),
    3: (0.8, 230.0, 0.5, 80.0),
    4: (1.5, 60.0, 0.2, 200.0),
    5: (0.7, 300.0, 0.6, 170.0),
}
_PAIRED_RADAR = {
    0: (1.4, 110.0, 0.3, 270.0),
    1: (0.8, 190.0, 0.5, 330.0),
    2: (1.0, 60.0, 0.4, 220.0),
    3: (1.0, 60.0, 0.4, 220.0),  # identical to class 2: only optical separates them
    4: (1.3, 250.0, 0.2, 90.0),
    5: (0.6, 140.0, 0.5, 30.0),
}
_DOMINANT_OPTICAL = {
    0: (1.5, 60.0, 0.2, 210.0),
    1: (0.8, 110.0, 0.5, 260.0),
    2: (1.5, 160.0, 0.2, 310.0),
    3: (0.8, 210.0, 0.5, 30.0),
    4: (1.5, 260.0, 0.2, 80.0),
    5: (0.8, 310.0, 0.5, 130.0),
}


def apply_complementarity(profiles: list[ClassProfile], plan: str, channels: tuple[int, ...] | None = None) -> list[ClassProfile]:
    """Rewrite class profiles so the plan's separability structure holds.

    "paired": classes 0/1 share optical profiles but differ in radar
    (bump centers >= 60 days apart, amplitude gap >= 0.5); classes 2/3 share
    radar and differ in optical; classes 4/5 differ in both modalities.
    "optical_dominant": every class is separable in optical while radar
    profiles differ only by a small amplitude nudge.
    """
    if plan not in PLANS:
        raise ValueError(f"unknown complementarity plan {plan!r}")
    if channels is None:
        channels = tuple(p.shape[0] for p in profiles[0].bumps)
    radar_ids = range(1, len(channels))
    bumps = [[b.copy() for b in p.bumps] for p in profiles]

    if plan == "paired":
        for k, layout in _PAIRED_OPTICAL.items():
            bumps[k][0] = _designed_bumps(channels[0], layout)
        for k, layout in _PAIRED_RADAR.items():
            for m in radar_ids:
                bumps[k][m] = _designed_bumps(channels[m], layout)
    else:  # optical_dominant
        for k, layout in _DOMINANT_OPTICAL.items():
            bumps[k][0] = _designed_bumps(channels[0], layout)
        base_radar = _designed_bumps(1, _PAIRED_RADAR[0])[0]
        for k in range(min(len(bumps) - 1, 6)):
            for m in radar_ids:
                nudged = np.tile(base_radar, (channels[m], 1, 1))
                nudged[:, :, 0] = np.minimum(nudged[:, :, 0] + 0.05 * k, 2.0)
                bumps[k][m] = nudged
    return [ClassProfile(tuple(b)) for b in bumps]


def class_profiles(config: SynthConfig) -> list[ClassProfile]:
    """The dataset's profile set: seeded random base plus the plan design."""
    rng = rng_stream(config.seed, "profiles")
    return apply_complementarity(random_profiles(config, rng), config.plan, config.channels)


def _tessellate(config: SynthConfig, rng: np.random.Generator) -> tuple[np.ndarray, int]:
    """Nearest-seed-point partition with 1px-eroded margins between parcels."""
    h, w = config.height, config.width
    yy, xx = np.mgrid[0:h, 0:w]
    min_pixels = 6
    for _ in range(256):
        n_parcels = int(rng.integers(config.min_parcels, config.max_parcels + 1))
        seeds_y = rng.integers(0, h, size=n_parcels)
        seeds_x = rng.integers(0, w, size=n_parcels)
        dist = (yy[None] - seeds_y[:, None, None]) ** 2 + (xx[None] - seeds_x[:, None, None]) ** 2
        regions = np.argmin(dist, axis=0) + 1
        eroded = _erode_boundaries(regions)
        counts = np.bincount(eroded.ravel(), minlength=n_parcels + 1)[1:]
        if np.all(counts >= min_pixels):
            return eroded.astype(np.int32), n_parcels
    raise RuntimeError("could not tessellate a patch with the requested parcel count")


def _erode_boundaries(regions: np.ndarray) -> np.ndarray:
    """Zero out pixels whose 3x3 neighbourhood touches another parcel."""
    padded = np.pad(regions, 1, mode="edge")
    keep = np.ones_like(regions, dtype=bool)
    h, w = regions.shape
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            keep &= padded[1 + dy : 1 + dy + h, 1 + dx : 1 + dx + w] == regions
    out = regions.copy()
    out[~keep] = 0
    return out


def _sample_dates(rng: np.random.Generator, lo: int, hi: int) -> np.ndarray:
    count = int(rng.integers(lo, hi + 1))
    days = rng.choice(np.arange(1, DAYS_IN_YEAR + 1), size=count, replace=False)
    return np.sort(days).astype(np.int32)


def generate_patch(
    config: SynthConfig,
    rng: np.random.Generator,
    profiles: list[ClassProfile] | None = None,
    patch_id: str = "patch",
) -> tuple[MultimodalSample, PatchMeta]:
    """Render one patch: tessellation, class curves, clouds, speckle."""
    if profiles is None:
        profiles = class_profiles(config)
    instances, n_parcels = _tessellate(config, rng)
    labels = {pid: int(rng.integers(0, config.n_classes)) for pid in range(1, n_parcels + 1)}

    semantic = np.full(instances.shape, background_class(config.n_classes), dtype=np.int32)
    for pid, label in labels.items():
        semantic[instances == pid] = label

    modalities = []
    occluded = np.zeros(0, dtype=bool)
    for m in range(config.n_modalities):
        if m == 0:
            dates = _sample_dates(rng, *config.optical_steps)
        else:
            dates = _sample_dates(rng, *config.radar_steps)
        table = np.stack([p.evaluate(m, dates) for p in profiles])  # (K+1, C, T)
        data = table[semantic].transpose(3, 2, 0, 1)  # (T, C, H, W)
        data = data + rng.normal(0.0, config.pixel_jitter, size=(1,) + data.shape[1:])
        data = data + rng.normal(0.0, config.acq_noise, size=data.shape)
        if m == 0:
            flags = rng.random(len(dates)) < config.cloud_rate
            if flags.any():
                bright = 1.8 + rng.normal(0.0, 0.05, size=data[flags].shape)
                data[flags] = bright
            occluded = flags
        elif config.speckle_scale > 0:
            shape = 1.0 / config.speckle_scale**2
            data = data * rng.gamma(shape, 1.0 / shape, size=data.shape)
        modalities.append(ModalitySeries(m, data.astype(np.float32), dates))

    sample = MultimodalSample(patch_id, modalities, AnnotationSet(semantic, instances, labels))
    return sample, PatchMeta(occluded_optical=occluded)


def generate_dataset(config: SynthConfig, root: Path | str) -> DatasetManifest:
    """Write a full dataset tree; deterministic for a fixed config."""
    config.validate()
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    profiles = class_profiles(config)

    patch_ids = [f"patch_{i:04d}" for i in range(config.n_patches)]
    folds = make_folds(patch_ids, n_folds=5, seed=config.seed)
    samples_for_stats = []
    for i, pid in enumerate(patch_ids):
        rng = rng_stream(config.seed, f"patch/{i:05d}")
        sample, _ = generate_patch(config, rng, profiles, patch_id=pid)
        save_sample(sample, root)
        if folds[pid] != 5:
            samples_for_stats.append(sample)

    stats = _channel_statistics(samples_for_stats, config)
    class_names = [f"crop_{k:02d}" for k in range(config.n_classes)] + ["background"]
    manifest = DatasetManifest(
        root=str(root),
        patch_ids=patch_ids,
        folds=folds,
        channel_stats=stats,
        n_classes=config.n_classes,
        class_names=class_names,
    )
    save_manifest(manifest, root)
    (root / "synth_config.json").write_text(json.dumps(asdict(config), indent=2, sort_keys=True) + "\n")
    return manifest


def _channel_statistics(samples: list[MultimodalSample], config: SynthConfig) -> list[dict[str, list[float]]]:
    stats = []
    for m in range(config.n_modalities):
        total = np.zeros(config.channels[m], dtype=np.float64)
        total_sq = np.zeros(config.channels[m], dtype=np.float64)
        count = 0
        for s in samples:
            data = s.modalities[m].data.astype(np.float64)
            total += data.sum(axis=(0, 2, 3))
            total_sq += (data**2).sum(axis=(0, 2, 3))
            count += data.shape[0] * data.shape[2] * data.shape[3]
        mean = total / max(count, 1)
        var = np.maximum(total_sq / max(count, 1) - mean**2, 1e-12)
        stats.append({"mean": mean.tolist(), "std": np.sqrt(var).tolist()})
    return stats

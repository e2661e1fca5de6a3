"""Core sample and annotation types.

Conventions used throughout the package:

* modality 0 is the optical stream; all further modalities are radar-like.
* dates are integer day-of-year in [1, 366], strictly increasing per series.
* crop classes are 0..K-1; the background class is K (patch rasters only);
  the void value is K+1 and is excluded from every loss and metric.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class ValidationError(Exception):
    """Raised when a sample or annotation violates an invariant."""


@dataclass(frozen=True)
class ModalitySeries:
    """One sensor stream for one patch: data is T x C x H x W float32."""

    modality_id: int
    data: np.ndarray
    dates: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "data", np.asarray(self.data, dtype=np.float32))
        object.__setattr__(self, "dates", np.asarray(self.dates, dtype=np.int32))

    @property
    def n_steps(self) -> int:
        return self.data.shape[0]

    @property
    def n_channels(self) -> int:
        return self.data.shape[1]

    def validate(self) -> None:
        if self.data.ndim != 4:
            raise ValidationError(
                f"modality {self.modality_id}: data must be T x C x H x W, got shape {self.data.shape}"
            )
        if self.dates.ndim != 1 or len(self.dates) != self.data.shape[0]:
            raise ValidationError(
                f"modality {self.modality_id}: {len(self.dates)} dates for {self.data.shape[0]} acquisitions"
            )
        if len(self.dates) == 0:
            raise ValidationError(f"modality {self.modality_id}: empty series")
        if np.any(np.diff(self.dates) <= 0):
            raise ValidationError(f"modality {self.modality_id}: dates must be strictly increasing")
        if self.dates[0] < 1 or self.dates[-1] > 366:
            raise ValidationError(f"modality {self.modality_id}: dates must be day-of-year in [1, 366]")
        if not np.all(np.isfinite(self.data)):
            raise ValidationError(f"modality {self.modality_id}: non-finite data values")


@dataclass(frozen=True)
class AnnotationSet:
    """Per-pixel semantic and instance rasters plus per-parcel labels."""

    semantic: np.ndarray
    instances: np.ndarray
    parcel_labels: dict[int, int]

    def __post_init__(self):
        object.__setattr__(self, "semantic", np.asarray(self.semantic, dtype=np.int32))
        object.__setattr__(self, "instances", np.asarray(self.instances, dtype=np.int32))
        object.__setattr__(self, "parcel_labels", {int(k): int(v) for k, v in self.parcel_labels.items()})

    def validate(self, n_classes: int | None = None) -> None:
        if self.semantic.shape != self.instances.shape or self.semantic.ndim != 2:
            raise ValidationError(
                f"semantic {self.semantic.shape} and instance {self.instances.shape} rasters must be equal 2-d shapes"
            )
        ids = np.unique(self.instances)
        ids = ids[ids > 0]
        missing = [int(i) for i in ids if int(i) not in self.parcel_labels]
        if missing:
            raise ValidationError(f"instance ids {missing} missing from parcel labels")
        if n_classes is not None:
            void = void_value(n_classes)
            if self.semantic.min(initial=0) < 0 or self.semantic.max(initial=0) > void:
                raise ValidationError(
                    f"semantic values outside [0, {void}] (void={void})"
                )
            bad = {k: v for k, v in self.parcel_labels.items() if not 0 <= v < n_classes}
            if bad:
                raise ValidationError(f"parcel labels outside [0, {n_classes}): {bad}")
            for pid, label in self.parcel_labels.items():
                pix = self.semantic[self.instances == pid]
                pix = pix[pix != void]
                if pix.size and np.any(pix != label):
                    raise ValidationError(
                        f"parcel {pid}: semantic raster disagrees with label {label}"
                    )


@dataclass(frozen=True)
class MultimodalSample:
    """All modality series of one patch plus its annotations."""

    patch_id: str
    modalities: list[ModalitySeries]
    annotations: AnnotationSet

    @property
    def n_modalities(self) -> int:
        return len(self.modalities)

    @property
    def height(self) -> int:
        return self.modalities[0].data.shape[2]

    @property
    def width(self) -> int:
        return self.modalities[0].data.shape[3]

    def validate(self, n_classes: int | None = None) -> None:
        if not self.modalities:
            raise ValidationError(f"{self.patch_id}: no modalities")
        for m, series in enumerate(self.modalities):
            if series.modality_id != m:
                raise ValidationError(f"{self.patch_id}: modalities must be ordered by id, found {series.modality_id} at {m}")
            series.validate()
        shapes = {s.data.shape[2:] for s in self.modalities}
        if len(shapes) != 1:
            raise ValidationError(f"{self.patch_id}: modalities disagree on spatial shape: {shapes}")
        if self.annotations.semantic.shape != (self.height, self.width):
            raise ValidationError(
                f"{self.patch_id}: annotation shape {self.annotations.semantic.shape} != patch shape"
            )
        self.annotations.validate(n_classes)


@dataclass
class DatasetManifest:
    """Dataset index: patch ids, fold map, channel statistics, nomenclature."""

    root: str
    patch_ids: list[str]
    folds: dict[str, int]
    channel_stats: list[dict[str, list[float]]]  # per modality: {"mean": [...], "std": [...]}
    n_classes: int
    class_names: list[str] = field(default_factory=list)

    def validate(self) -> None:
        if set(self.folds) != set(self.patch_ids):
            raise ValidationError("fold assignment does not cover exactly the patch set")
        for m, stats in enumerate(self.channel_stats):
            std = np.asarray(stats["std"], dtype=np.float64)
            if np.any(std <= 0):
                raise ValidationError(f"modality {m}: non-positive channel std")

    def fold_patches(self, fold: int) -> list[str]:
        return [p for p in self.patch_ids if self.folds[p] == fold]

    @property
    def n_modalities(self) -> int:
        return len(self.channel_stats)


def background_class(n_classes: int) -> int:
    """Class index used for non-parcel pixels in patch rasters."""
    return n_classes


def void_value(n_classes: int) -> int:
    """Raster value excluded from losses and metrics (one past background)."""
    return n_classes + 1


def n_semantic_classes(n_classes: int) -> int:
    """Nomenclature size for pixelwise tasks: crop classes plus background."""
    return n_classes + 1

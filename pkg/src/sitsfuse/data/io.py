"""On-disk dataset layout and bit-exact sample round trips.

One directory per patch under the dataset root:

    <root>/<patch_id>/modality_<m>.tns   float32 T x C x H x W
    <root>/<patch_id>/dates.json         {"<m>": [d1, d2, ...]}
    <root>/<patch_id>/semantic.tns       int32 H x W
    <root>/<patch_id>/instances.tns      int32 H x W
    <root>/<patch_id>/labels.json        {"<parcel id>": class}
    <root>/manifest.json
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .tns import read_tensor, write_tensor
from .types import AnnotationSet, DatasetManifest, ModalitySeries, MultimodalSample, ValidationError

MANIFEST_NAME = "manifest.json"


def patch_dir(root: Path | str, patch_id: str) -> Path:
    return Path(root) / patch_id


def save_sample(sample: MultimodalSample, root: Path | str) -> Path:
    """Write one patch directory; round-trips bit-exactly through load_sample."""
    sample.validate()
    out = patch_dir(root, sample.patch_id)
    out.mkdir(parents=True, exist_ok=True)
    dates = {}
    for series in sample.modalities:
        write_tensor(out / f"modality_{series.modality_id}.tns", series.data)
        dates[str(series.modality_id)] = [int(d) for d in series.dates]
    _write_json(out / "dates.json", dates)
    write_tensor(out / "semantic.tns", sample.annotations.semantic)
    write_tensor(out / "instances.tns", sample.annotations.instances)
    _write_json(out / "labels.json", {str(k): v for k, v in sorted(sample.annotations.parcel_labels.items())})
    return out


def load_sample(patch_id: str, manifest: DatasetManifest) -> MultimodalSample:
    """Load and validate one patch from a manifest's dataset root."""
    root = patch_dir(manifest.root, patch_id)
    if not root.is_dir():
        raise FileNotFoundError(f"patch directory missing: {root}")
    dates = json.loads((root / "dates.json").read_text())
    modalities = []
    for m in range(manifest.n_modalities):
        tensor_path = root / f"modality_{m}.tns"
        if not tensor_path.exists():
            raise FileNotFoundError(f"missing modality file: {tensor_path}")
        data = read_tensor(tensor_path)
        if str(m) not in dates:
            raise ValidationError(f"{patch_id}: dates.json has no entry for modality {m}")
        modalities.append(ModalitySeries(m, data, np.asarray(dates[str(m)], dtype=np.int32)))
    labels = {int(k): int(v) for k, v in json.loads((root / "labels.json").read_text()).items()}
    annotations = AnnotationSet(
        semantic=read_tensor(root / "semantic.tns"),
        instances=read_tensor(root / "instances.tns"),
        parcel_labels=labels,
    )
    sample = MultimodalSample(patch_id, modalities, annotations)
    sample.validate(manifest.n_classes)
    return sample


def save_manifest(manifest: DatasetManifest, root: Path | str) -> Path:
    manifest.validate()
    payload = {
        "patch_ids": manifest.patch_ids,
        "folds": manifest.folds,
        "channel_stats": manifest.channel_stats,
        "n_classes": manifest.n_classes,
        "class_names": manifest.class_names,
    }
    path = Path(root) / MANIFEST_NAME
    _write_json(path, payload)
    return path


def load_manifest(root: Path | str) -> DatasetManifest:
    path = Path(root) / MANIFEST_NAME
    payload = json.loads(path.read_text())
    manifest = DatasetManifest(
        root=str(root),
        patch_ids=list(payload["patch_ids"]),
        folds={k: int(v) for k, v in payload["folds"].items()},
        channel_stats=payload["channel_stats"],
        n_classes=int(payload["n_classes"]),
        class_names=list(payload.get("class_names", [])),
    )
    manifest.validate()
    return manifest


def load_fold_samples(manifest: DatasetManifest, folds: list[int] | None = None) -> list[MultimodalSample]:
    """Load all samples of the given folds (all patches when folds is None)."""
    wanted = set(folds) if folds is not None else None
    out = []
    for pid in manifest.patch_ids:
        if wanted is None or manifest.folds[pid] in wanted:
            out.append(load_sample(pid, manifest))
    if wanted is not None and not out:
        raise ValidationError(f"no patches in folds {sorted(wanted)}")
    return out


def _write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")

"""Experiment configuration: one JSON file describing dataset, model, and
training, with helpers to materialize each piece.

A run directory always contains `config.json` (the resolved configuration),
`checkpoint/` (parameters in the tensor format plus an index), and
`history.json` (per-epoch records).
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

import torch

from .data.io import MANIFEST_NAME
from .encoders.ltae import LTAEConfig
from .encoders.pse import PixelSetConfig
from .encoders.utae import UTAEConfig
from .fusion import ConfigurationError, FusionConfig
from .models import build_model, validate_combination
from .synthgen import SynthConfig, generate_dataset
from .tasks import Checkpoint, SitsDataset, TrainConfig, load_checkpoint_into, save_checkpoint, train

CONFIG_NAME = "config.json"


@dataclass
class ExperimentConfig:
    seed: int = 0
    out_dir: str | None = None
    dataset_path: str | None = None
    synth: SynthConfig | None = None
    train: TrainConfig = TrainConfig()
    fusion: FusionConfig = FusionConfig()
    pse: PixelSetConfig = PixelSetConfig()
    ltae: LTAEConfig = LTAEConfig()
    utae: UTAEConfig = UTAEConfig()
    head_hidden: int = 64

    def validate(self) -> None:
        if self.dataset_path is None and self.synth is None:
            raise ConfigurationError("config needs a dataset_path, a synth section, or both")
        self.train.validate()
        self.fusion.validate()
        validate_combination(self.train.task, self.fusion)

    def to_dict(self) -> dict:
        payload = {
            "seed": self.seed,
            "out_dir": self.out_dir,
            "dataset_path": self.dataset_path,
            "synth": dataclasses.asdict(self.synth) if self.synth else None,
            "train": dataclasses.asdict(self.train),
            "fusion": dataclasses.asdict(self.fusion),
            "pse": dataclasses.asdict(self.pse),
            "ltae": dataclasses.asdict(self.ltae),
            "utae": dataclasses.asdict(self.utae),
            "head_hidden": self.head_hidden,
        }
        return payload

    def save(self, path: Path | str) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        return path

    @classmethod
    def from_dict(cls, payload: dict) -> "ExperimentConfig":
        seed = int(payload.get("seed", 0))
        train_payload = dict(payload.get("train") or {})
        train_payload.setdefault("seed", seed)
        synth_payload = payload.get("synth")
        if synth_payload is not None:
            synth_payload = dict(synth_payload)
            synth_payload.setdefault("seed", seed)
        return cls(
            seed=seed,
            out_dir=payload.get("out_dir"),
            dataset_path=payload.get("dataset_path"),
            synth=_build(SynthConfig, synth_payload, {"channels", "optical_steps", "radar_steps"}) if synth_payload else None,
            train=_build(TrainConfig, train_payload, {"betas", "train_folds"}, nested_tuples={"lr_steps"}),
            fusion=_build(FusionConfig, payload.get("fusion") or {}, {"aux_weights", "dropout"}),
            pse=_build(PixelSetConfig, payload.get("pse") or {}, {"pixel_mlp", "out_mlp"}),
            ltae=_build(LTAEConfig, payload.get("ltae") or {}, {"out_mlp"}),
            utae=_build(UTAEConfig, payload.get("utae") or {}, {"level_widths"}),
            head_hidden=int(payload.get("head_hidden", 64)),
        )

    @classmethod
    def load(cls, path: Path | str) -> "ExperimentConfig":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"config file not found: {path}")
        try:
            payload = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"config {path} is not valid JSON: {exc}") from exc
        return cls.from_dict(payload)


def _build(cls, payload: dict, tuple_fields: set[str], nested_tuples: set[str] = frozenset()):
    kwargs = {}
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(payload) - known
    if unknown:
        raise ConfigurationError(f"unknown {cls.__name__} fields: {sorted(unknown)}")
    for name, value in payload.items():
        if name in nested_tuples and value is not None:
            value = tuple(tuple(item) for item in value)
        elif name in tuple_fields and value is not None:
            value = tuple(value)
        kwargs[name] = value
    return cls(**kwargs)


def ensure_dataset(config: ExperimentConfig, generate_missing: bool = True) -> SitsDataset:
    """Load the configured dataset, generating it first when configured."""
    if config.dataset_path is None:
        raise ConfigurationError("no dataset_path configured")
    root = Path(config.dataset_path)
    if not (root / MANIFEST_NAME).exists():
        if config.synth is None or not generate_missing:
            raise FileNotFoundError(f"dataset not found at {root} and no synth section to generate it")
        generate_dataset(config.synth, root)
    return SitsDataset.load(root)


def build_model_from(config: ExperimentConfig, dataset: SitsDataset, dtype: torch.dtype = torch.float32):
    channels = tuple(len(stats["mean"]) for stats in dataset.manifest.channel_stats)
    return build_model(
        config.train.task,
        config.fusion,
        channels,
        dataset.manifest.n_classes,
        pse=config.pse,
        ltae=config.ltae,
        utae=config.utae,
        head_hidden=config.head_hidden,
        seed=config.train.seed,
        dtype=dtype,
    )


def run_train(config: ExperimentConfig, run_dir: Path | str, resume: bool = False) -> Checkpoint:
    """Train per config and write the run directory layout."""
    config.validate()
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    dataset = ensure_dataset(config)
    model = build_model_from(config, dataset)
    start_epoch = 0
    history: list[dict] = []
    if resume:
        if not (run_dir / "checkpoint").exists():
            raise ConfigurationError(f"--resume given but {run_dir} holds no checkpoint")
        start_epoch, history = load_checkpoint_into(model, run_dir)
        if start_epoch >= config.train.epochs:
            raise ConfigurationError(
                f"run already reached epoch {start_epoch}; raise train.epochs above {config.train.epochs} to resume"
            )
    config.save(run_dir / CONFIG_NAME)
    checkpoint = train(model, dataset, config.train, config.fusion, start_epoch=start_epoch, prior_history=history)
    save_checkpoint(checkpoint, run_dir)
    return checkpoint


def load_run(run_dir: Path | str, dtype: torch.dtype = torch.float32) -> tuple[ExperimentConfig, SitsDataset, Checkpoint]:
    """Rebuild a run's model from its config and restore the checkpoint."""
    run_dir = Path(run_dir)
    config = ExperimentConfig.load(run_dir / CONFIG_NAME)
    dataset = ensure_dataset(config, generate_missing=False)
    model = build_model_from(config, dataset, dtype)
    epoch, history = load_checkpoint_into(model, run_dir)
    return config, dataset, Checkpoint(model, config.train, config.fusion, epoch=epoch, history=history)

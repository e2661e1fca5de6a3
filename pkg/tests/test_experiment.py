import json

import pytest

from sitsfuse.experiment import ExperimentConfig, ensure_dataset, load_run, run_train
from sitsfuse.fusion import ConfigurationError


def _payload(tmp_path, **patch):
    payload = {
        "seed": 9,
        "dataset_path": str(tmp_path / "ds"),
        "synth": {"n_patches": 8, "height": 16, "width": 16, "optical_steps": [4, 5], "radar_steps": [5, 6]},
        "train": {"task": "parcel", "epochs": 1, "batch_size": 16, "eval_every": 0},
        "fusion": {"scheme": "late", "dropout": [0.1, 0.1, 0.1]},
        "pse": {"n_pixels": 8, "pixel_mlp": [8, 12], "out_mlp": [12]},
        "ltae": {"width": 12, "n_heads": 2, "d_k": 4, "out_mlp": [12]},
        "utae": {"level_widths": [4, 8, 8], "n_heads": 2, "d_k": 4},
    }
    payload.update(patch)
    return payload


def test_round_trip(tmp_path):
    config = ExperimentConfig.from_dict(_payload(tmp_path))
    path = config.save(tmp_path / "c.json")
    back = ExperimentConfig.load(path)
    assert back == config
    assert back.fusion.dropout == (0.1, 0.1, 0.1)
    assert back.synth.optical_steps == (4, 5)


def test_seed_propagates_to_nested_configs(tmp_path):
    config = ExperimentConfig.from_dict(_payload(tmp_path))
    assert config.train.seed == 9
    assert config.synth.seed == 9
    explicit = _payload(tmp_path)
    explicit["train"]["seed"] = 123
    config = ExperimentConfig.from_dict(explicit)
    assert config.train.seed == 123


def test_validation_rejects_illegal_combo(tmp_path):
    payload = _payload(tmp_path)
    payload["fusion"]["scheme"] = "mid"
    payload["train"]["task"] = "semantic"
    config = ExperimentConfig.from_dict(payload)
    with pytest.raises(ConfigurationError, match="mid fusion"):
        config.validate()


def test_dataset_required(tmp_path):
    payload = _payload(tmp_path)
    payload.pop("dataset_path")
    payload.pop("synth")
    with pytest.raises(ConfigurationError, match="dataset"):
        ExperimentConfig.from_dict(payload).validate()


def test_unknown_field_rejected(tmp_path):
    payload = _payload(tmp_path)
    payload["ltae"]["n_head"] = 2
    with pytest.raises(ConfigurationError, match="unknown"):
        ExperimentConfig.from_dict(payload)


def test_run_train_and_load_run(tmp_path):
    config = ExperimentConfig.from_dict(_payload(tmp_path))
    checkpoint = run_train(config, tmp_path / "run")
    assert checkpoint.epoch == 1
    loaded_config, dataset, loaded = load_run(tmp_path / "run")
    assert loaded.epoch == 1
    assert loaded_config.fusion.scheme == "late"
    assert loaded.history == checkpoint.history
    import torch

    for (_, a), (_, b) in zip(sorted(checkpoint.model.named_parameters()), sorted(loaded.model.named_parameters())):
        assert torch.equal(a, b)


def test_ensure_dataset_generates_once(tmp_path):
    config = ExperimentConfig.from_dict(_payload(tmp_path))
    first = ensure_dataset(config)
    manifest_bytes = (tmp_path / "ds" / "manifest.json").read_bytes()
    again = ensure_dataset(config)
    assert (tmp_path / "ds" / "manifest.json").read_bytes() == manifest_bytes
    assert first.manifest.patch_ids == again.manifest.patch_ids

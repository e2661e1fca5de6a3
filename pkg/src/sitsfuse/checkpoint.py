"""Parameter serialization: one `.tns` file per tensor plus a JSON index."""

from __future__ import annotations

import json
from pathlib import Path

import torch
from torch import nn

from .data.tns import read_tensor, write_tensor

INDEX_NAME = "index.json"


def save_parameters(model: nn.Module, out_dir: Path | str) -> Path:
    """Write every state-dict tensor as float32 alongside an index file."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    index = {}
    for i, (name, tensor) in enumerate(sorted(model.state_dict().items())):
        filename = f"p{i:04d}.tns"
        write_tensor(out / filename, tensor.detach().to(torch.float32).numpy())
        index[name] = {"file": filename, "shape": list(tensor.shape)}
    (out / INDEX_NAME).write_text(json.dumps(index, indent=2, sort_keys=True) + "\n")
    return out


def load_parameters(model: nn.Module, in_dir: Path | str) -> nn.Module:
    """Load an index directory into `model`, checking names and shapes."""
    in_dir = Path(in_dir)
    index = json.loads((in_dir / INDEX_NAME).read_text())
    state = model.state_dict()
    if set(index) != set(state):
        missing = set(state) - set(index)
        extra = set(index) - set(state)
        raise ValueError(f"checkpoint/model mismatch: missing {sorted(missing)}, extra {sorted(extra)}")
    loaded = {}
    for name, entry in index.items():
        array = read_tensor(in_dir / entry["file"])
        if list(array.shape) != list(state[name].shape):
            raise ValueError(f"shape mismatch for {name}: {array.shape} vs {tuple(state[name].shape)}")
        loaded[name] = torch.from_numpy(array).to(state[name].dtype)
    model.load_state_dict(loaded)
    return model

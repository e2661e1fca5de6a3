"""Central finite-difference gradient oracle for double-precision models."""

from __future__ import annotations

from typing import Callable

import numpy as np
import torch


def fd_gradient_check(
    model: torch.nn.Module,
    loss_fn: Callable[[], torch.Tensor],
    rel_tol: float = 1e-3,
    step: float = 1e-4,
    coords_per_tensor: int = 4,
    seed: int = 0,
) -> float:
    """Compare autograd gradients against central differences.

    Checks `coords_per_tensor` randomly chosen coordinates of every
    parameter tensor; `loss_fn` must recompute the loss from the model's
    current parameters. Returns the worst relative error seen.
    """
    assert next(model.parameters()).dtype == torch.float64, "gradient checks need float64"
    rng = np.random.default_rng(seed)
    loss = loss_fn()
    named = [(n, p) for n, p in sorted(model.named_parameters()) if p.requires_grad]
    grads = torch.autograd.grad(loss, [p for _, p in named], allow_unused=True)
    worst = 0.0
    for (name, param), grad in zip(named, grads):
        flat = param.data.reshape(-1)
        n = flat.numel()
        picks = rng.choice(n, size=min(coords_per_tensor, n), replace=False)
        for idx in picks:
            idx = int(idx)
            original = flat[idx].item()
            with torch.no_grad():
                flat[idx] = original + step
            plus = float(loss_fn().detach())
            with torch.no_grad():
                flat[idx] = original - step
            minus = float(loss_fn().detach())
            with torch.no_grad():
                flat[idx] = original
            fd = (plus - minus) / (2.0 * step)
            analytic = 0.0 if grad is None else float(grad.reshape(-1)[idx])
            scale = max(abs(fd), abs(analytic), 1e-3)
            rel = abs(fd - analytic) / scale
            if rel > worst:
                worst = rel
            assert rel <= rel_tol, f"{name}[{idx}]: analytic {analytic:.3e} vs fd {fd:.3e} (rel {rel:.2e})"
    return worst

"""Seeded cross-validation fold assignment."""

from __future__ import annotations

from ..seeding import rng_stream


def make_folds(patch_ids: list[str], n_folds: int = 5, seed: int = 0) -> dict[str, int]:
    """Partition `patch_ids` into folds 1..n_folds with sizes differing by <= 1.

    Deterministic for a fixed seed: ids are shuffled once, then dealt
    round-robin.
    """
    if n_folds < 2:
        raise ValueError(f"n_folds must be >= 2, got {n_folds}")
    rng = rng_stream(seed, "folds")
    order = list(patch_ids)
    rng.shuffle(order)
    return {pid: 1 + (i % n_folds) for i, pid in enumerate(order)}

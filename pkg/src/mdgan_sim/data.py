"""Toy 2-D data: a ring of Gaussian modes, split evenly across benign clients."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class RingDataset:
    points: np.ndarray  # (M, 2)
    mode_labels: np.ndarray  # (M,)
    n_modes: int
    radius: float
    noise_std: float

    @property
    def centers(self) -> np.ndarray:
        return mode_centers(self.n_modes, self.radius)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "y", "mode_label"])
            for (x, y), lab in zip(self.points, self.mode_labels):
                w.writerow([repr(float(x)), repr(float(y)), int(lab)])


@dataclass(frozen=True)
class ClientShard:
    client_id: int
    points: np.ndarray
    mode_labels: np.ndarray

    def __len__(self) -> int:
        return len(self.points)


def mode_centers(n_modes: int, radius: float) -> np.ndarray:
    angles = 2 * np.pi * np.arange(n_modes) / n_modes
    return radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)


def make_ring_dataset(
    n_modes: int, radius: float, noise_std: float, total_points: int, rng: np.random.Generator
) -> RingDataset:
    """``total_points / n_modes`` Gaussian samples around each ring center.

    Draws further than 6 noise standard deviations from their center are redrawn.
    Points are stored grouped by mode.
    """
    if n_modes < 1 or total_points < 1:
        raise ValueError("n_modes and total_points must be positive")
    if total_points % n_modes:
        raise ValueError(f"total_points={total_points} is not divisible by n_modes={n_modes}")
    if radius < 0 or not noise_std > 0:
        raise ValueError("radius must be >= 0 and noise_std > 0")
    per_mode = total_points // n_modes
    centers = mode_centers(n_modes, radius)
    offsets = rng.normal(0.0, noise_std, size=(total_points, 2))
    limit = 6 * noise_std
    bad = np.linalg.norm(offsets, axis=1) > limit
    while bad.any():
        offsets[bad] = rng.normal(0.0, noise_std, size=(int(bad.sum()), 2))
        bad = np.linalg.norm(offsets, axis=1) > limit
    labels = np.repeat(np.arange(n_modes), per_mode)
    return RingDataset(centers[labels] + offsets, labels, n_modes, float(radius), float(noise_std))


def partition_shards(dataset: RingDataset, n_benign: int) -> list[ClientShard]:
    """Deal each mode's points round-robin so every shard gets an even share per mode."""
    if n_benign < 1:
        raise ValueError("need at least one benign client")
    owner = np.empty(len(dataset.points), dtype=int)
    for mode in range(dataset.n_modes):
        idx = np.flatnonzero(dataset.mode_labels == mode)
        owner[idx] = np.arange(len(idx)) % n_benign
    shards = []
    for cid in range(n_benign):
        sel = owner == cid
        shards.append(ClientShard(cid, dataset.points[sel], dataset.mode_labels[sel]))
    return shards


def round_batches(shard: ClientShard, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    """One pass over the shard in a fresh random order, cut into full batches."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if batch_size > len(shard):
        raise ValueError(f"batch_size={batch_size} exceeds shard size {len(shard)}")
    order = rng.permutation(len(shard))
    n = len(shard) // batch_size
    return [shard.points[order[j * batch_size:(j + 1) * batch_size]] for j in range(n)]


def sample_latent(batch_size: int, latent_dim: int, rng: np.random.Generator) -> np.ndarray:
    if batch_size < 1 or latent_dim < 1:
        raise ValueError("batch_size and latent_dim must be >= 1")
    return rng.standard_normal((batch_size, latent_dim))


def stream(seed: int, *key: int) -> np.random.Generator:
    """Independent generator addressed by ``(seed, *key)``, e.g. (seed, tag, client, round)."""
    return np.random.default_rng(np.random.SeedSequence([seed, *key]))

"""Fixed-capacity reservoir memory of labeled examples."""

from __future__ import annotations

import csv

import numpy as np

from .errors import ConfigError
from .nn import rng_from


class ReplayBuffer:
    """Reservoir of (image, label) pairs.

    After n offers, each offered example is stored with probability
    min(1, capacity / n). Insertion randomness comes from the buffer's own
    stream; sampling uses the generator passed to ``sample``.
    """

    def __init__(self, capacity: int, seed=0):
        if capacity < 0:
            raise ConfigError(f"buffer capacity must be >= 0, got {capacity}")
        self.capacity = capacity
        self.images: list[np.ndarray] = []
        self.labels: list[int] = []
        self.n_seen = 0
        self._rng = rng_from(seed)

    def __len__(self) -> int:
        return len(self.images)

    def insert(self, image: np.ndarray, label: int) -> None:
        self.n_seen += 1
        if self.capacity == 0:
            return
        if len(self.images) < self.capacity:
            self.images.append(image)
            self.labels.append(int(label))
            return
        slot = int(self._rng.integers(0, self.n_seen))
        if slot < self.capacity:
            self.images[slot] = image
            self.labels[slot] = int(label)

    def insert_batch(self, images: np.ndarray, labels: np.ndarray) -> None:
        for image, label in zip(images, labels):
            self.insert(image, label)

    def sample(self, k: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        """k examples: without replacement when the buffer holds >= k,
        with replacement otherwise. Empty buffer yields an empty batch."""
        n = len(self.images)
        if n == 0 or k <= 0:
            return np.empty((0,)), np.empty((0,), dtype=np.int64)
        if n >= k:
            idx = rng.choice(n, size=k, replace=False)
        else:
            idx = rng.integers(0, n, size=k)
        images = np.stack([self.images[i] for i in idx])
        labels = np.asarray([self.labels[i] for i in idx], dtype=np.int64)
        return images, labels

    def class_counts(self) -> dict[int, int]:
        counts: dict[int, int] = {}
        for label in self.labels:
            counts[label] = counts.get(label, 0) + 1
        return counts

    def contents(self) -> tuple[np.ndarray, np.ndarray]:
        if not self.images:
            return np.empty((0,)), np.empty((0,), dtype=np.int64)
        return np.stack(self.images), np.asarray(self.labels, dtype=np.int64)

    def dump(self, csv_path, blob_path) -> None:
        """(index, label) CSV plus a raw little-endian float64 image blob."""
        with open(csv_path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["index", "label"])
            for i, label in enumerate(self.labels):
                writer.writerow([i, label])
        with open(blob_path, "wb") as fh:
            for image in self.images:
                fh.write(np.ascontiguousarray(image, dtype="<f8").tobytes())

"""Toy image corpus: directories of raw-float tensors (.npy), one per image."""

from __future__ import annotations

from pathlib import Path

import numpy as np


def make_corpus(out_dir, count: int = 512, height: int = 24, width: int = 24,
                channels: int = 3, num_classes: int = 10, amplitude: float = 0.03,
                noise: float = 0.18, seed: int = 7) -> int:
    """Class-conditional blob images, matching the detector's toy distribution."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    pattern_rng = np.random.default_rng(seed)
    dim = height * width * channels
    patterns = 0.5 + amplitude * pattern_rng.choice([-1.0, 1.0], size=(num_classes, dim))
    for i in range(count):
        label = int(rng.integers(num_classes))
        flat = np.clip(patterns[label] + noise * rng.standard_normal(dim), 0.0, 1.0)
        image = flat.reshape(height, width, channels).astype(np.float32)
        np.save(out / f"img-{i:05d}-c{label}.npy", image)
    return count


def load_corpus(path, limit: int = None) -> np.ndarray:
    """All .npy images in a directory as one (N, H, W, C) float32 array.

    Unreadable or mis-shaped files are skipped with a warning count; an empty
    directory is an error for training callers, so they must check the count.
    """
    files = sorted(Path(path).glob("*.npy"))
    if limit is not None:
        files = files[:limit]
    images = []
    skipped = 0
    shape = None
    for f in files:
        try:
            arr = np.load(f)
        except (OSError, ValueError):
            skipped += 1
            continue
        if arr.ndim != 3 or (shape is not None and arr.shape != shape):
            skipped += 1
            continue
        if not np.isfinite(arr).all() or arr.min() < 0 or arr.max() > 1:
            skipped += 1
            continue
        shape = arr.shape
        images.append(arr.astype(np.float32))
    if skipped:
        import sys

        print(f"warning: skipped {skipped} unreadable corpus files", file=sys.stderr)
    if not images:
        return np.empty((0, 0, 0, 0), dtype=np.float32)
    return np.stack(images)

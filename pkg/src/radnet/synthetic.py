"""Seeded synthetic images for smoke tests and demos: a bright blob vs. a blank field."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .data import DatasetManifest, Record
from .gradcam import save_png


def blob_image(size, rng, blob: bool, noise=0.05) -> np.ndarray:
    """One ``3 x h x w`` image in [0, 1]; with ``blob`` a Gaussian spot is added."""
    h, w = (size, size) if isinstance(size, int) else size
    img = 0.1 + noise * rng.standard_normal((h, w))
    if blob:
        cy = rng.uniform(0.25, 0.75) * h
        cx = rng.uniform(0.25, 0.75) * w
        sigma = max(h, w) / 6
        yy, xx = np.mgrid[0:h, 0:w]
        img += 0.8 * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigma ** 2))
    img = np.clip(img, 0.0, 1.0)
    return np.repeat(img[None], 3, axis=0)


def blob_dataset(n=40, size=8, seed=0):
    """``n`` images, alternating blank (label 0) and blob (label 1)."""
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % 2
    images = np.stack([blob_image(size, rng, bool(y)) for y in labels])
    return images, labels


def write_blob_manifest(directory, n=40, size=8, seed=0, split=None,
                        classes=("blank", "blob")) -> Path:
    """Write ``n`` grayscale PNGs plus ``manifest.csv``; returns the manifest path.

    Each image is its own patient. ``split`` may be a callable ``i -> split``.
    """
    directory = Path(directory)
    (directory / "images").mkdir(parents=True, exist_ok=True)
    images, labels = blob_dataset(n, size, seed)
    records = []
    for i, (img, y) in enumerate(zip(images, labels)):
        rel = f"images/img{i:04d}.png"
        save_png(directory / rel, img[0])
        s = split(i) if callable(split) else (split or "unassigned")
        records.append(Record(rel, int(y), f"P{i:04d}", s))
    manifest = DatasetManifest(list(classes), records, directory)
    path = directory / "manifest.csv"
    manifest.write(path)
    return path

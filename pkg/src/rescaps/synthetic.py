"""Synthetic two-class stained-texture images for fixtures and smoke runs.

Both classes are pink stroma dotted with purple nuclei; malignant samples have
many small dense nuclei, benign ones a few large pale ones. The classes are
invariant under rotation and flips, so augmentation does not mix them.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .imageio import write_image

_PINK = np.array([0.90, 0.60, 0.75])
_PURPLE = np.array([0.45, 0.25, 0.60])


def texture(label: int, size: int, rng: np.random.Generator, height: int | None = None
            ) -> np.ndarray:
    h, w = height or size, size
    yy, xx = np.mgrid[0:h, 0:w].astype(float)
    scale = min(h, w) / 32.0
    if label == 0:
        count, radius, strength = int(rng.integers(2, 5)), 3.0 * scale, 0.55
    else:
        count, radius, strength = int(rng.integers(14, 22)), 1.4 * scale, 0.95
    density = np.zeros((h, w))
    for cy, cx in zip(rng.uniform(0, h, count), rng.uniform(0, w, count)):
        density += np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * radius ** 2))
    mix = strength * np.clip(density, 0.0, 1.0)[..., None]
    img = mix * _PURPLE + (1 - mix) * _PINK
    img += rng.normal(0.0, 0.03, size=img.shape)
    img += rng.uniform(-0.05, 0.05, size=3)
    return np.clip(img, 0.0, 1.0)


def make_set(n: int, size: int = 32, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """n images alternating benign/malignant, shape [n, size, size, 3]."""
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % 2
    imgs = np.stack([texture(int(y), size, rng) for y in labels])
    return imgs, labels


def write_tree(root, per_stratum: int = 4, size: int = 32, seed: int = 0,
               magnifications=(40, 100, 200, 400), height: int | None = None) -> list[Path]:
    """Write a root/{benign,malignant}/{M}X/*.ppm layout and return the file paths."""
    root = Path(root)
    rng = np.random.default_rng(seed)
    out = []
    for label, name in enumerate(("benign", "malignant")):
        for mag in magnifications:
            d = root / name / f"{mag}X"
            d.mkdir(parents=True, exist_ok=True)
            for i in range(per_stratum):
                p = d / f"{name[0].upper()}_{mag}_{i:03d}.ppm"
                write_image(p, texture(label, size, rng, height))
                out.append(p)
    return out

"""Geometric transforms for (H, W, 3) images: rotate, flip, shear, resize.

Rotation and shear are inverse-mapped about the image center with bilinear
sampling and reflect padding, so output dimensions always equal input ones.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage


@dataclass(frozen=True)
class AugmentSpec:
    rotation: float = 180.0
    flip_horizontal: float = 0.5
    flip_vertical: float = 0.5
    shear: float = 0.2
    seed: int = 0

    def __post_init__(self):
        for name in ("flip_horizontal", "flip_vertical"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must be a probability, got {p}")
        if not 0.0 <= self.shear <= 1.0:
            raise ValueError(f"shear range must lie in [0, 1], got {self.shear}")
        if self.rotation < 0:
            raise ValueError(f"rotation range must be non-negative, got {self.rotation}")


def _snap(x: float) -> float:
    r = round(x)
    return float(r) if abs(x - r) < 1e-12 else x


def _affine(img: np.ndarray, inv: np.ndarray) -> np.ndarray:
    """Sample img at center + inv @ (p - center) for every output pixel p = (row, col)."""
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape[:2]
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    rows, cols = np.meshgrid(np.arange(h, dtype=float), np.arange(w, dtype=float), indexing="ij")
    dy, dx = rows - cy, cols - cx
    src_r = cy + inv[0, 0] * dy + inv[0, 1] * dx
    src_c = cx + inv[1, 0] * dy + inv[1, 1] * dx
    out = np.empty_like(img)
    for ch in range(img.shape[2]):
        out[..., ch] = ndimage.map_coordinates(img[..., ch], [src_r, src_c], order=1,
                                               mode="mirror")
    return np.clip(out, 0.0, 1.0)


def rotate(img: np.ndarray, degrees: float) -> np.ndarray:
    """Rotate about the center; positive angles turn clockwise as displayed (rows point down)."""
    t = np.deg2rad(degrees)
    c, s = _snap(np.cos(t)), _snap(np.sin(t))
    if c == 1.0 and s == 0.0:
        return np.array(img, dtype=np.float64)
    inv = np.array([[c, -s], [s, c]])
    return _affine(img, inv)


def flip(img: np.ndarray, axis: str) -> np.ndarray:
    if axis == "horizontal":
        return np.ascontiguousarray(img[:, ::-1])
    if axis == "vertical":
        return np.ascontiguousarray(img[::-1])
    raise ValueError(f"flip axis must be 'horizontal' or 'vertical', got {axis!r}")


def shear(img: np.ndarray, factor_x: float, factor_y: float) -> np.ndarray:
    """Forward map (x, y) -> (x + fx*y, y + fy*x) about the center."""
    if abs(factor_x) > 1 or abs(factor_y) > 1:
        raise ValueError(f"shear factors must satisfy |f| <= 1, got ({factor_x}, {factor_y})")
    if factor_x == 0 and factor_y == 0:
        return np.array(img, dtype=np.float64)
    # forward matrix in (row, col) = (y, x) order
    fwd = np.array([[1.0, factor_y], [factor_x, 1.0]])
    if abs(np.linalg.det(fwd)) < 1e-9:
        raise ValueError(f"shear factors ({factor_x}, {factor_y}) give a singular map")
    return _affine(img, np.linalg.inv(fwd))


def resize(img: np.ndarray, out_w: int, out_h: int) -> np.ndarray:
    """Bilinear resampling on pixel centers."""
    if out_w < 1 or out_h < 1:
        raise ValueError(f"target size must be positive, got {out_w}x{out_h}")
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape[:2]
    if (h, w) == (out_h, out_w):
        return img.copy()
    r = (np.arange(out_h) + 0.5) * (h / out_h) - 0.5
    c = (np.arange(out_w) + 0.5) * (w / out_w) - 0.5
    rr, cc = np.meshgrid(r, c, indexing="ij")
    out = np.empty((out_h, out_w, img.shape[2]))
    for ch in range(img.shape[2]):
        out[..., ch] = ndimage.map_coordinates(img[..., ch], [rr, cc], order=1, mode="nearest")
    return np.clip(out, 0.0, 1.0)


def augment(img: np.ndarray, spec: AugmentSpec, rng: np.random.Generator) -> np.ndarray:
    """Random rotation, then flips, then shear; fully determined by the generator state."""
    angle = rng.uniform(-spec.rotation, spec.rotation)
    flip_h = rng.random() < spec.flip_horizontal
    flip_v = rng.random() < spec.flip_vertical
    fx, fy = rng.uniform(-spec.shear, spec.shear, size=2)
    out = rotate(img, angle) if angle != 0 else np.array(img, dtype=np.float64)
    if flip_h:
        out = flip(out, "horizontal")
    if flip_v:
        out = flip(out, "vertical")
    return shear(out, fx, fy)

"""Statistical color transfer in the decorrelated l-alpha-beta space.

Each image is moved to LMS cone space, log-compressed, and rotated into three
nearly decorrelated channels. Matching the per-channel mean and standard
deviation of a reference image there transfers its color appearance.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

LOG_FLOOR = 1e-6
# spreads below this are rounding noise from a constant channel
STD_FLOOR = 1e-12

RGB_TO_LMS = np.array([
    [0.3811, 0.5783, 0.0402],
    [0.1967, 0.7244, 0.0782],
    [0.0241, 0.1288, 0.8444],
])
LMS_TO_RGB = np.linalg.inv(RGB_TO_LMS)

LOGLMS_TO_LAB = np.diag([1 / np.sqrt(3), 1 / np.sqrt(6), 1 / np.sqrt(2)]) @ np.array([
    [1.0, 1.0, 1.0],
    [1.0, 1.0, -2.0],
    [1.0, -1.0, 0.0],
])
LAB_TO_LOGLMS = np.linalg.inv(LOGLMS_TO_LAB)


@dataclass(frozen=True)
class ChannelStats:
    means: tuple[float, float, float]
    stds: tuple[float, float, float]

    def __post_init__(self):
        if len(self.means) != 3 or len(self.stds) != 3:
            raise ValueError("ChannelStats needs three means and three stds")
        if any(s < 0 for s in self.stds):
            raise ValueError(f"standard deviations must be non-negative: {self.stds}")

    def save(self, path) -> None:
        vals = list(self.means) + list(self.stds)
        Path(path).write_text("\n".join(repr(float(v)) for v in vals) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "ChannelStats":
        vals = [float(tok) for tok in Path(path).read_text(encoding="utf-8").split()]
        if len(vals) != 6:
            raise ValueError(f"{path}: expected 6 numbers, found {len(vals)}")
        return cls(tuple(vals[:3]), tuple(vals[3:]))


def rgb_to_decorrelated(img: np.ndarray) -> np.ndarray:
    lms = np.asarray(img, dtype=np.float64) @ RGB_TO_LMS.T
    return np.log10(np.maximum(lms, LOG_FLOOR)) @ LOGLMS_TO_LAB.T


def decorrelated_to_rgb(lab: np.ndarray, clamp: bool = True) -> np.ndarray:
    lms = 10.0 ** (np.asarray(lab) @ LAB_TO_LOGLMS.T)
    rgb = lms @ LMS_TO_RGB.T
    return np.clip(rgb, 0.0, 1.0) if clamp else rgb


def channel_stats(lab: np.ndarray) -> ChannelStats:
    """Population mean and std of each channel of a decorrelated image."""
    flat = np.asarray(lab).reshape(-1, 3)
    return ChannelStats(tuple(flat.mean(axis=0).tolist()), tuple(flat.std(axis=0).tolist()))


def image_stats(img: np.ndarray) -> ChannelStats:
    return channel_stats(rgb_to_decorrelated(img))


def transfer_decorrelated(lab: np.ndarray, target: ChannelStats) -> np.ndarray:
    """Shift/scale each channel to the target moments. Zero-spread channels are only shifted."""
    src = channel_stats(lab)
    out = np.empty_like(lab, dtype=np.float64)
    for c in range(3):
        x = lab[..., c] - src.means[c]
        if src.stds[c] > STD_FLOOR:
            x = x * (target.stds[c] / src.stds[c])
        out[..., c] = x + target.means[c]
    return out


def reinhard_transfer(src: np.ndarray, target: ChannelStats) -> np.ndarray:
    return decorrelated_to_rgb(transfer_decorrelated(rgb_to_decorrelated(src), target))

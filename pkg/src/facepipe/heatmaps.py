"""Sub-pixel landmark <-> heatmap codec.

Encoding builds one channel per landmark from the distance between each
pixel center and the landmark, measured in coordinates normalized to the
unit square:

    base(p)_{c,y,x} = 1 - (1 / sqrt(2)) * || p_c - center(x, y) ||_2
    heat            = max((base^8 - t) / (1 - t), 0),   t = 0.8

which leaves a compact peak of support around each point.  Decoding
recovers sub-pixel positions as the intensity-weighted centroid of pixel
centers after per-channel normalization and thresholding at 0.5.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import NUM_LANDMARKS, ImageBuffer, LandmarkSet, save_image

SUPPORT_THRESHOLD = 0.8
DECODE_THRESHOLD = 0.5


@dataclass(frozen=True)
class Heatmap:
    """Encoded landmark heatmap: (98, H, W), values in [0, 1]."""

    data: np.ndarray

    def __post_init__(self) -> None:
        a = np.asarray(self.data, dtype=np.float64)
        if a.ndim != 3 or a.shape[0] != NUM_LANDMARKS:
            raise ValueError(f"heatmap must be ({NUM_LANDMARKS}, H, W), got {a.shape}")
        if a.min() < 0.0 or a.max() > 1.0:
            raise ValueError("heatmap values must lie in [0, 1]")
        a.setflags(write=False)
        object.__setattr__(self, "data", a)

    @property
    def extent(self) -> tuple[int, int]:
        return (self.data.shape[2], self.data.shape[1])


@dataclass(frozen=True)
class ActivationVolume:
    """Raw per-landmark activations: (98, H, W), unbounded finite values."""

    data: np.ndarray

    def __post_init__(self) -> None:
        a = np.asarray(self.data, dtype=np.float64)
        if a.ndim != 3 or a.shape[0] != NUM_LANDMARKS:
            raise ValueError(f"activations must be ({NUM_LANDMARKS}, H, W), got {a.shape}")
        if not np.isfinite(a).all():
            raise ValueError("activations must be finite")
        a.setflags(write=False)
        object.__setattr__(self, "data", a)


@dataclass(frozen=True)
class DecodeResult:
    landmarks: LandmarkSet
    # True where a channel had no pixels above threshold and the decoder
    # fell back to the argmax pixel center.
    fallback: np.ndarray


def pixel_centers(width: int, height: int) -> tuple[np.ndarray, np.ndarray]:
    """Center coordinates of every pixel: two (H, W) arrays (x, y)."""
    xs = np.arange(width, dtype=np.float64) + 0.5
    ys = np.arange(height, dtype=np.float64) + 0.5
    return np.meshgrid(xs, ys)


def encode_heatmap(landmarks: LandmarkSet, width: int, height: int) -> Heatmap:
    """Encode landmark positions into per-channel heatmaps."""
    p = landmarks.points
    if (p[:, 0] < 0).any() or (p[:, 0] > width).any() \
            or (p[:, 1] < 0).any() or (p[:, 1] > height).any():
        bad = int(np.argmax((p[:, 0] < 0) | (p[:, 0] > width)
                            | (p[:, 1] < 0) | (p[:, 1] > height)))
        raise ValueError(f"landmark {bad} at {tuple(p[bad])} outside {width}x{height} image")
    cx, cy = pixel_centers(width, height)
    dx = p[:, 0, None, None] / width - cx[None] / width
    dy = p[:, 1, None, None] / height - cy[None] / height
    base = 1.0 - np.sqrt(dx * dx + dy * dy) / np.sqrt(2.0)
    heat = (base ** 8 - SUPPORT_THRESHOLD) / (1.0 - SUPPORT_THRESHOLD)
    return Heatmap(np.maximum(heat, 0.0))


def decode_landmarks(acts: ActivationVolume | Heatmap) -> DecodeResult:
    """Decode sub-pixel landmark positions from activations.

    Each channel is normalized by its maximum (which must be positive),
    quantized to float32 so that any positive rescaling of the input
    decodes to bit-identical output, thresholded at 0.5, and reduced to
    the weighted centroid of surviving pixel centers.
    """
    a = acts.data
    _, h, w = a.shape
    peak = a.max(axis=(1, 2))
    if (peak <= 0).any():
        bad = int(np.argmax(peak <= 0))
        raise ValueError(f"channel {bad} has non-positive maximum {peak[bad]}")
    norm = (a / peak[:, None, None]).astype(np.float32).astype(np.float64)
    norm[norm < DECODE_THRESHOLD] = 0.0

    cx, cy = pixel_centers(w, h)
    total = norm.sum(axis=(1, 2))
    fallback = total <= 0.0
    total[fallback] = 1.0  # placeholder, overwritten below
    px = (norm * cx[None]).sum(axis=(1, 2)) / total
    py = (norm * cy[None]).sum(axis=(1, 2)) / total
    if fallback.any():
        flat = a.reshape(a.shape[0], -1).argmax(axis=1)
        px[fallback] = flat[fallback] % w + 0.5
        py[fallback] = flat[fallback] // w + 0.5
    pts = np.stack([px, py], axis=1)
    return DecodeResult(LandmarkSet(pts), fallback)


def roundtrip(landmarks: LandmarkSet, width: int, height: int) -> LandmarkSet:
    """Encode then decode; recovers positions to well under a pixel."""
    return decode_landmarks(encode_heatmap(landmarks, width, height)).landmarks


def dump_channels(heat: Heatmap, out_dir: str | Path) -> list[Path]:
    """Debug dump: write each channel as an 8-bit grayscale PNG."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for c in range(heat.data.shape[0]):
        p = out_dir / f"channel_{c:02d}.png"
        save_image(ImageBuffer(heat.data[c][:, :, None]), p)
        paths.append(p)
    return paths

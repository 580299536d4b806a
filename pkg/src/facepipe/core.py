"""Shared value types, image/annotation codecs, and elementary geometry.

Coordinate conventions used across the package:

* Images are ``(H, W, C)`` float64 arrays with values in ``[0, 1]``,
  ``C`` in ``{1, 3}``.  Pixel ``(x, y)`` occupies the unit square whose
  center is ``(x + 0.5, y + 0.5)``; continuous image coordinates always
  refer to that center-based frame.
* Landmark sets follow the 98-point convention with parts
  contour 0-32, brows 33-50, nose 51-59, eyes 60-75, mouth 76-95,
  pupils 96-97.
* Pose angles are Euler angles in degrees (yaw, pitch, roll), kept in
  the canonical range ``[-180, 180)``.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
from PIL import Image

NUM_LANDMARKS = 98

# Part partition of the 98-point layout.
PART_RANGES: dict[str, range] = {
    "contour": range(0, 33),
    "brows": range(33, 51),
    "nose": range(51, 60),
    "eyes": range(60, 76),
    "mouth": range(76, 96),
    "pupils": range(96, 98),
}

MOUTH_CORNERS = (76, 82)  # outer mouth corner pair
MOUTH_RANGE = PART_RANGES["mouth"]

# Mask labels.
LABEL_BACKGROUND = 0
LABEL_FACE = 1
LABEL_HAIR = 2

# Gray levels used when masks are written as 8-bit PNGs.
_MASK_GRAY = {LABEL_BACKGROUND: 0, LABEL_FACE: 127, LABEL_HAIR: 255}
_GRAY_MASK = {v: k for k, v in _MASK_GRAY.items()}

ANNOTATION_VERSION = 1


def _left_right_swaps() -> list[tuple[int, int]]:
    """Index pairs exchanged under a horizontal flip of the 98-point layout."""
    pairs: list[tuple[int, int]] = []
    pairs += [(i, 32 - i) for i in range(16)]                      # jaw, chin 16 fixed
    pairs += list(zip(range(33, 38), range(46, 41, -1)))           # brow upper arcs
    pairs += list(zip(range(38, 42), range(50, 46, -1)))           # brow lower arcs
    pairs += [(55, 59), (56, 58)]                                  # nostrils, 57 fixed
    pairs += list(zip(range(60, 68), [72, 71, 70, 69, 68, 75, 74, 73]))  # eyelids
    pairs += [(96, 97)]                                            # pupils
    pairs += [(76, 82), (77, 81), (78, 80), (87, 83), (86, 84)]    # outer lips
    pairs += [(88, 92), (89, 91), (95, 93)]                        # inner lips
    return pairs


def flip_permutation() -> np.ndarray:
    """Permutation ``perm`` with ``flipped[i] = original[perm[i]]``."""
    perm = np.arange(NUM_LANDMARKS)
    for a, b in _left_right_swaps():
        perm[a], perm[b] = perm[b], perm[a]
    return perm


FLIP_PERMUTATION = flip_permutation()


def _frozen_array(a: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(a)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class ImageBuffer:
    """Immutable floating-point image.

    Attributes:
        data: ``(H, W, C)`` float64 array, values in ``[0, 1]``, ``C`` in ``{1, 3}``.
    """

    data: np.ndarray

    def __post_init__(self) -> None:
        a = np.asarray(self.data, dtype=np.float64)
        if a.ndim != 3 or a.shape[2] not in (1, 3):
            raise ValueError(f"image must be (H, W, C) with C in {{1, 3}}, got {a.shape}")
        if a.shape[0] < 1 or a.shape[1] < 1:
            raise ValueError("image extent must be positive")
        if not np.isfinite(a).all():
            raise ValueError("image contains non-finite values")
        if a.min() < 0.0 or a.max() > 1.0:
            raise ValueError("image values must lie in [0, 1]")
        object.__setattr__(self, "data", _frozen_array(a))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def extent(self) -> tuple[int, int]:
        """(width, height)."""
        return (self.width, self.height)


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box given by center and extent, in pixels."""

    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self) -> None:
        if not all(np.isfinite([self.cx, self.cy, self.w, self.h])):
            raise ValueError("box fields must be finite")
        if self.w <= 0 or self.h <= 0:
            raise ValueError("box extent must be positive")

    @property
    def corners(self) -> tuple[float, float, float, float]:
        """(x0, y0, x1, y1)."""
        return (self.cx - self.w / 2, self.cy - self.h / 2,
                self.cx + self.w / 2, self.cy + self.h / 2)

    @property
    def area(self) -> float:
        return self.w * self.h

    @staticmethod
    def from_corners(x0: float, y0: float, x1: float, y1: float) -> "BoundingBox":
        return BoundingBox((x0 + x1) / 2, (y0 + y1) / 2, x1 - x0, y1 - y0)


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union of two boxes; 1.0 for identical boxes."""
    ax0, ay0, ax1, ay1 = a.corners
    bx0, by0, bx1, by1 = b.corners
    iw = min(ax1, bx1) - max(ax0, bx0)
    ih = min(ay1, by1) - max(ay0, by0)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = a.area + b.area - inter
    return inter / union


@dataclass(frozen=True)
class LandmarkSet:
    """98 landmark positions in pixel coordinates.

    Attributes:
        points: ``(98, 2)`` float64 array of (x, y) positions.
    """

    points: np.ndarray

    def __post_init__(self) -> None:
        p = np.asarray(self.points, dtype=np.float64)
        if p.shape != (NUM_LANDMARKS, 2):
            raise ValueError(f"expected ({NUM_LANDMARKS}, 2) points, got {p.shape}")
        if not np.isfinite(p).all():
            raise ValueError("landmarks contain non-finite values")
        object.__setattr__(self, "points", _frozen_array(p))

    def part(self, name: str) -> np.ndarray:
        return self.points[PART_RANGES[name]]

    def flipped(self, width: float) -> "LandmarkSet":
        """Horizontal mirror: x -> width - x with left/right indices exchanged."""
        pts = self.points[FLIP_PERMUTATION].copy()
        pts[:, 0] = width - pts[:, 0]
        return LandmarkSet(pts)


def _wrap_degrees(a: float) -> float:
    return float((a + 180.0) % 360.0 - 180.0)


@dataclass(frozen=True)
class PoseAngles:
    """Euler angles in degrees, canonicalized to [-180, 180)."""

    yaw: float
    pitch: float
    roll: float

    def __post_init__(self) -> None:
        for name in ("yaw", "pitch", "roll"):
            v = getattr(self, name)
            if not np.isfinite(v):
                raise ValueError(f"{name} must be finite")
            object.__setattr__(self, name, _wrap_degrees(float(v)))

    def as_array(self) -> np.ndarray:
        return np.array([self.yaw, self.pitch, self.roll], dtype=np.float64)


@dataclass(frozen=True)
class SegMask:
    """Per-pixel segmentation labels: 0 background, 1 face, 2 hair."""

    labels: np.ndarray

    def __post_init__(self) -> None:
        m = np.asarray(self.labels)
        if m.ndim != 2:
            raise ValueError(f"mask must be 2-d, got shape {m.shape}")
        if not np.isin(m, (LABEL_BACKGROUND, LABEL_FACE, LABEL_HAIR)).all():
            raise ValueError("mask labels must be in {0, 1, 2}")
        object.__setattr__(self, "labels", _frozen_array(m.astype(np.uint8)))

    @property
    def extent(self) -> tuple[int, int]:
        return (self.labels.shape[1], self.labels.shape[0])


def binary_face_mask(mask: SegMask) -> ImageBuffer:
    """1-channel {0, 1} image that is 1 exactly on face-labelled pixels."""
    face = (mask.labels == LABEL_FACE).astype(np.float64)
    return ImageBuffer(face[:, :, None])


@dataclass(frozen=True)
class FrameRecord:
    """Annotations of one face detection in one frame.

    The pixel data may live on disk (``image_path``) or in memory
    (``image``); :func:`frame_image` resolves whichever is present.
    """

    frame: int
    bbox: BoundingBox
    landmarks: LandmarkSet | None = None
    pose: PoseAngles | None = None
    mask: SegMask | None = None
    image_path: Path | None = None
    image: ImageBuffer | None = None

    def __post_init__(self) -> None:
        if self.frame < 0:
            raise ValueError("frame index must be non-negative")


def frame_image(record: FrameRecord) -> ImageBuffer:
    if record.image is not None:
        return record.image
    if record.image_path is None:
        raise ValueError(f"frame {record.frame} has no image data or path")
    return load_image(record.image_path)


@dataclass
class FrameSequence:
    """Annotated frames of one tracked face, frame indices strictly increasing."""

    frames: list[FrameRecord] = field(default_factory=list)

    def __post_init__(self) -> None:
        idx = [f.frame for f in self.frames]
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise ValueError("frame indices must be strictly increasing")

    def __len__(self) -> int:
        return len(self.frames)

    def __iter__(self) -> Iterator[FrameRecord]:
        return iter(self.frames)

    def __getitem__(self, i: int) -> FrameRecord:
        return self.frames[i]


# --------------------------------------------------------------------------
# PNG and annotation codecs
# --------------------------------------------------------------------------

def load_image(path: str | Path) -> ImageBuffer:
    """Read an 8-bit grayscale or RGB PNG as values ``v / 255``."""
    with Image.open(path) as im:
        if im.mode not in ("L", "RGB"):
            raise ValueError(f"unsupported image mode {im.mode!r} in {path}")
        a = np.asarray(im, dtype=np.uint8)
    if a.ndim == 2:
        a = a[:, :, None]
    return ImageBuffer(a.astype(np.float64) / 255.0)


def save_image(img: ImageBuffer, path: str | Path) -> None:
    """Write an image as 8-bit PNG, quantizing with round(v * 255)."""
    _to_pil(img).save(path, format="PNG")


def encode_png(img: ImageBuffer) -> bytes:
    """The same 8-bit PNG encoding as save_image, as in-memory bytes."""
    buf = io.BytesIO()
    _to_pil(img).save(buf, format="PNG")
    return buf.getvalue()


def _to_pil(img: ImageBuffer) -> Image.Image:
    a = np.rint(img.data * 255.0).astype(np.uint8)
    if img.channels == 1:
        return Image.fromarray(a[:, :, 0], mode="L")
    return Image.fromarray(a, mode="RGB")


def load_mask(path: str | Path) -> SegMask:
    with Image.open(path) as im:
        if im.mode != "L":
            raise ValueError(f"mask PNG must be 8-bit grayscale, got {im.mode!r}")
        a = np.asarray(im, dtype=np.uint8)
    labels = np.zeros_like(a)
    known = np.zeros(a.shape, dtype=bool)
    for gray, label in _GRAY_MASK.items():
        hit = a == gray
        labels[hit] = label
        known |= hit
    if not known.all():
        raise ValueError(f"mask {path} contains gray levels outside {sorted(_GRAY_MASK)}")
    return SegMask(labels)


def save_mask(mask: SegMask, path: str | Path) -> None:
    gray = np.zeros_like(mask.labels)
    for label, g in _MASK_GRAY.items():
        gray[mask.labels == label] = g
    Image.fromarray(gray, mode="L").save(path, format="PNG")


def save_annotation(record: FrameRecord, path: str | Path, mask_path: str | None = None) -> None:
    """Write one frame's annotations as JSON (schema version 1)."""
    if record.landmarks is None or record.pose is None:
        raise ValueError("annotation requires landmarks and pose")
    doc = {
        "version": ANNOTATION_VERSION,
        "frame": record.frame,
        "bbox": {"cx": record.bbox.cx, "cy": record.bbox.cy,
                 "w": record.bbox.w, "h": record.bbox.h},
        "landmarks": [[float(x), float(y)] for x, y in record.landmarks.points],
        "pose": {"yaw": record.pose.yaw, "pitch": record.pose.pitch,
                 "roll": record.pose.roll},
    }
    if mask_path is not None:
        doc["mask"] = mask_path
    Path(path).write_text(json.dumps(doc, indent=1))


def load_annotation(path: str | Path, image_path: Path | None = None) -> FrameRecord:
    """Read one frame's annotation JSON; resolves the mask path if present."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ValueError(f"malformed annotation {path}: {e}") from e
    if doc.get("version") != ANNOTATION_VERSION:
        raise ValueError(f"unsupported annotation version {doc.get('version')!r} in {path}")
    try:
        bbox = BoundingBox(**doc["bbox"])
        landmarks = LandmarkSet(np.array(doc["landmarks"], dtype=np.float64))
        pose = PoseAngles(**doc["pose"])
        frame = int(doc["frame"])
    except (KeyError, TypeError) as e:
        raise ValueError(f"annotation {path} missing field: {e}") from e
    mask = None
    if "mask" in doc:
        mask = load_mask(path.parent / doc["mask"])
    return FrameRecord(frame=frame, bbox=bbox, landmarks=landmarks, pose=pose,
                       mask=mask, image_path=image_path)


# --------------------------------------------------------------------------
# Resampling primitives
# --------------------------------------------------------------------------

def bilinear_sample(data: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Sample ``(H, W, C)`` data at continuous center-based coordinates.

    Coordinates are clamped to the image, so queries at or beyond the
    border replicate edge pixels.  Returns an array shaped like
    ``xs`` plus a trailing channel axis.
    """
    h, w = data.shape[:2]
    fx = np.clip(np.asarray(xs, dtype=np.float64) - 0.5, 0.0, w - 1.0)
    fy = np.clip(np.asarray(ys, dtype=np.float64) - 0.5, 0.0, h - 1.0)
    x0 = np.floor(fx).astype(np.intp)
    y0 = np.floor(fy).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    tx = (fx - x0)[..., None]
    ty = (fy - y0)[..., None]
    top = data[y0, x0] * (1 - tx) + data[y0, x1] * tx
    bot = data[y1, x0] * (1 - tx) + data[y1, x1] * tx
    return top * (1 - ty) + bot * ty


def resize_bilinear(img: ImageBuffer, width: int, height: int) -> ImageBuffer:
    """Bilinear resize; a same-size resize returns the input unchanged."""
    if (width, height) == img.extent:
        return img
    if width < 1 or height < 1:
        raise ValueError("target extent must be positive")
    xs = (np.arange(width, dtype=np.float64) + 0.5) * (img.width / width)
    ys = (np.arange(height, dtype=np.float64) + 0.5) * (img.height / height)
    gx, gy = np.meshgrid(xs, ys)
    return ImageBuffer(np.clip(bilinear_sample(img.data, gx, gy), 0.0, 1.0))

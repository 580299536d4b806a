"""Detection grouping and motion-adaptive track smoothing.

Detections whose boxes overlap strongly across consecutive frames are
chained into per-face sequences.  Box centers, box extents, and each
landmark part are then smoothed with a weight that backs off as the
tracked quantity moves faster, so fast motion stays responsive while
near-static jitter is averaged away.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import (
    PART_RANGES,
    BoundingBox,
    FrameRecord,
    FrameSequence,
    LandmarkSet,
    iou,
)

IOU_GROUPING_THRESHOLD = 0.75


@dataclass(frozen=True)
class SmoothingParams:
    """Motion-adaptive averaging parameters.

    Attributes:
        min_weight: floor of the averaging weight; keeps some smoothing
            even at high speed.
        sigma_v: speed scale in px/frame; the averaging weight decays as
            exp(-|v| / sigma_v).
        window: centered window length in frames, clamped at sequence ends.
    """

    min_weight: float = 0.15
    sigma_v: float = 2.0
    window: int = 5

    def __post_init__(self) -> None:
        if not 0.0 <= self.min_weight <= 1.0:
            raise ValueError("min_weight must be in [0, 1]")
        if self.sigma_v <= 0:
            raise ValueError("sigma_v must be positive")
        if self.window < 1 or self.window % 2 == 0:
            raise ValueError("window must be a positive odd frame count")


def group_detections(
    detections: Sequence[Sequence[FrameRecord]],
    threshold: float = IOU_GROUPING_THRESHOLD,
) -> list[FrameSequence]:
    """Partition per-frame detections into sequences by box overlap.

    A detection joins the open sequence whose last box overlaps it with
    the highest IoU above ``threshold`` (ties go to the older sequence);
    otherwise it starts a new sequence.  Each sequence takes at most one
    detection per frame.  Every detection lands in exactly one sequence.
    """
    tracks: list[list[FrameRecord]] = []
    for per_frame in detections:
        taken: set[int] = set()
        for det in per_frame:
            best, best_iou = -1, threshold
            for t, track in enumerate(tracks):
                if t in taken or track[-1].frame >= det.frame:
                    continue
                v = iou(track[-1].bbox, det.bbox)
                if v > best_iou:
                    best, best_iou = t, v
            if best < 0:
                tracks.append([det])
                taken.add(len(tracks) - 1)
            else:
                tracks[best].append(det)
                taken.add(best)
    return [FrameSequence(t) for t in tracks]


def motion_adaptive_smooth(signal: np.ndarray, params: SmoothingParams) -> np.ndarray:
    """Smooth a (T, k) time series with a motion-adaptive window average.

    Each sample is read as a group of 2-d points when k is even (one
    k-d point otherwise); the per-frame speed is the Euclidean norm of
    the difference of consecutive group means.  The output is

        out_t = x_t + w_t * (mean(window around t) - x_t),
        w_t   = min_weight + (1 - min_weight) * exp(-|v_t| / sigma_v)

    with the window clamped at the boundaries.  Constant series pass
    through bit-identically.
    """
    x = np.asarray(signal, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"signal must be (T, k), got shape {x.shape}")
    t_len, k = x.shape
    if t_len == 0:
        return x.copy()

    centroid = x.reshape(t_len, -1, 2).mean(axis=1) if k % 2 == 0 else x
    speed = np.zeros(t_len)
    if t_len > 1:
        speed[1:] = np.linalg.norm(np.diff(centroid, axis=0), axis=1)
    weight = params.min_weight + (1.0 - params.min_weight) * np.exp(-speed / params.sigma_v)

    r = params.window // 2
    out = np.empty_like(x)
    for t in range(t_len):
        lo, hi = max(0, t - r), min(t_len, t + r + 1)
        # Mean of deviations from x_t keeps constant stretches exact.
        dev = (x[lo:hi] - x[t]).sum(axis=0) / (hi - lo)
        out[t] = x[t] + weight[t] * dev
    return out


def _smoothed_landmarks(frames: list[FrameRecord], params: SmoothingParams) -> list[np.ndarray] | None:
    if any(f.landmarks is None for f in frames):
        return None
    pts = np.stack([f.landmarks.points for f in frames])  # (T, 98, 2)
    out = pts.copy()
    for rng in PART_RANGES.values():
        flat = pts[:, rng, :].reshape(len(frames), -1)
        out[:, rng, :] = motion_adaptive_smooth(flat, params).reshape(len(frames), len(rng), 2)
    return [out[t] for t in range(len(frames))]


def smooth_sequence(seq: FrameSequence, params: SmoothingParams | None = None) -> FrameSequence:
    """Smooth box centers, box extents, and each landmark part of a track.

    The six landmark parts are smoothed independently so that, say, a
    talking mouth does not bleed averaging into the eyes.  Pose angles,
    masks, and images pass through untouched.
    """
    params = params or SmoothingParams()
    frames = list(seq.frames)
    if not frames:
        return FrameSequence([])

    centers = np.array([[f.bbox.cx, f.bbox.cy] for f in frames])
    extents = np.array([[f.bbox.w, f.bbox.h] for f in frames])
    centers = motion_adaptive_smooth(centers, params)
    extents = motion_adaptive_smooth(extents, params)
    landmarks = _smoothed_landmarks(frames, params)

    smoothed = []
    for t, f in enumerate(frames):
        box = BoundingBox(centers[t, 0], centers[t, 1], extents[t, 0], extents[t, 1])
        lms = LandmarkSet(landmarks[t]) if landmarks is not None else f.landmarks
        smoothed.append(FrameRecord(frame=f.frame, bbox=box, landmarks=lms, pose=f.pose,
                                    mask=f.mask, image_path=f.image_path, image=f.image))
    return FrameSequence(smoothed)

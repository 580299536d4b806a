"""Synthetic faces: a 3-D 98-point template, pose corpora, and test frames.

The template is a stylized but anatomically laid-out face in a canonical
frame (x right, y down, z toward the viewer, face roughly inside the
unit square).  Rotating it in 3-D and projecting orthographically yields
landmark sets whose ground-truth pose is known by construction, which is
what the landmark transformer trains against.  A matching rasterizer
draws flat-shaded face images from the same rotated geometry so whole
pipelines can run end to end without any real footage.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import (
    BoundingBox,
    FrameRecord,
    FrameSequence,
    ImageBuffer,
    LandmarkSet,
    PoseAngles,
    SegMask,
    _left_right_swaps,
    save_annotation,
    save_image,
    save_mask,
)

DEFAULT_SCALE = 0.36  # face radius as a fraction of min(W, H)


def _template_2d() -> np.ndarray:
    """98 canonical (x, y) positions; right side mirrored from the left."""
    pts = np.full((98, 2), np.nan)

    theta = np.radians(180.0 - 5.625 * np.arange(17))  # temples to chin
    pts[0:17, 0] = 0.75 * np.cos(theta)
    pts[0:17, 1] = 0.15 + 0.85 * np.sin(theta)

    pts[33:38] = [(-0.62, -0.38), (-0.50, -0.44), (-0.38, -0.47),
                  (-0.26, -0.44), (-0.15, -0.39)]
    pts[38:42] = [(-0.57, -0.35), (-0.45, -0.385), (-0.33, -0.385), (-0.22, -0.35)]

    pts[51:55] = [(0.0, -0.30), (0.0, -0.18), (0.0, -0.06), (0.0, 0.06)]
    pts[55] = (-0.16, 0.15)
    pts[56] = (-0.08, 0.185)
    pts[57] = (0.0, 0.20)

    pts[60:68] = [(-0.50, -0.20), (-0.42, -0.255), (-0.33, -0.27), (-0.24, -0.25),
                  (-0.17, -0.195), (-0.24, -0.145), (-0.33, -0.13), (-0.42, -0.15)]
    pts[96] = (-0.33, -0.20)

    pts[76:80] = [(-0.29, 0.47), (-0.18, 0.425), (-0.07, 0.405), (0.0, 0.415)]
    pts[85] = (0.0, 0.585)
    pts[86] = (-0.10, 0.565)
    pts[87] = (-0.20, 0.53)
    pts[88] = (-0.20, 0.47)
    pts[89] = (-0.09, 0.455)
    pts[90] = (0.0, 0.465)
    pts[94] = (0.0, 0.525)
    pts[95] = (-0.09, 0.515)

    for a, b in _left_right_swaps():
        pts[b] = (-pts[a, 0], pts[a, 1])
    assert not np.isnan(pts).any()
    return pts


def _template_depth(xy: np.ndarray) -> np.ndarray:
    """Smooth facial relief: an ellipsoidal dome plus a nose bump."""
    x, y = xy[:, 0], xy[:, 1]
    dome = 1.0 - (x / 0.85) ** 2 - ((y - 0.12) / 1.05) ** 2
    z = 0.55 * np.sqrt(np.clip(dome, 0.0, None)) - 0.25
    z += 0.30 * np.exp(-((x / 0.18) ** 2 + ((y - 0.10) / 0.30) ** 2))
    return z


def face_template_3d() -> np.ndarray:
    """Canonical (98, 3) template, exactly left/right symmetric."""
    xy = _template_2d()
    return np.column_stack([xy, _template_depth(xy)])


def rotation_matrix(pose: PoseAngles) -> np.ndarray:
    """R = Rz(roll) Rx(pitch) Ry(yaw) in the x-right, y-down, z-out frame."""
    ya, pi, ro = np.radians([pose.yaw, pose.pitch, pose.roll])
    ry = np.array([[np.cos(ya), 0, np.sin(ya)], [0, 1, 0], [-np.sin(ya), 0, np.cos(ya)]])
    rx = np.array([[1, 0, 0], [0, np.cos(pi), -np.sin(pi)], [0, np.sin(pi), np.cos(pi)]])
    rz = np.array([[np.cos(ro), -np.sin(ro), 0], [np.sin(ro), np.cos(ro), 0], [0, 0, 1]])
    return rz @ rx @ ry


def project_points(pts3: np.ndarray, pose: PoseAngles, extent: tuple[int, int],
                   scale: float = DEFAULT_SCALE) -> np.ndarray:
    """Rotate and orthographically project onto pixel coordinates."""
    w, h = extent
    rotated = pts3 @ rotation_matrix(pose).T
    s = scale * min(w, h)
    return rotated[:, :2] * s + np.array([w / 2.0, h / 2.0])


def project_template(pose: PoseAngles, extent: tuple[int, int],
                     scale: float = DEFAULT_SCALE) -> LandmarkSet:
    return LandmarkSet(project_points(face_template_3d(), pose, extent, scale))


@dataclass(frozen=True)
class PoseCorpus:
    """Paired landmark/pose samples for transformer training.

    Inputs are (source landmarks, target pose); the target is the
    landmark set observed at that pose of the same face instance.
    """

    source_points: np.ndarray  # (n, 98, 2)
    source_poses: np.ndarray   # (n, 3) yaw/pitch/roll degrees
    target_points: np.ndarray  # (n, 98, 2)
    target_poses: np.ndarray   # (n, 3)
    extent: tuple[int, int]

    def __len__(self) -> int:
        return len(self.source_points)


def generate_pose_corpus(n: int, seed: int, extent: tuple[int, int] = (256, 256),
                         max_angle: float = 45.0, noise_px: float = 0.5) -> PoseCorpus:
    """Sample rotation pairs of the template with small landmark noise."""
    rng = np.random.default_rng(seed)
    base = face_template_3d()
    sp, st, tp, tt = [], [], [], []
    for _ in range(n):
        angles = rng.uniform(-max_angle, max_angle, size=6)
        pose_s = PoseAngles(*angles[:3])
        pose_t = PoseAngles(*angles[3:])
        ps = project_points(base, pose_s, extent) + rng.normal(0, noise_px, (98, 2))
        pt = project_points(base, pose_t, extent) + rng.normal(0, noise_px, (98, 2))
        sp.append(ps)
        tp.append(pt)
        st.append(pose_s.as_array())
        tt.append(pose_t.as_array())
    return PoseCorpus(np.array(sp), np.array(st), np.array(tp), np.array(tt), extent)


def save_corpus(corpus: PoseCorpus, path: str | Path) -> None:
    np.savez(path, source_points=corpus.source_points, source_poses=corpus.source_poses,
             target_points=corpus.target_points, target_poses=corpus.target_poses,
             extent=np.array(corpus.extent))


def load_corpus(path: str | Path) -> PoseCorpus:
    with np.load(path) as z:
        return PoseCorpus(z["source_points"], z["source_poses"], z["target_points"],
                          z["target_poses"], tuple(int(v) for v in z["extent"]))


# --------------------------------------------------------------------------
# Rasterized synthetic frames
# --------------------------------------------------------------------------

def _fill_polygon(shape: tuple[int, int], pts: np.ndarray) -> np.ndarray:
    """Even-odd polygon rasterization against pixel centers."""
    h, w = shape
    px, py = np.meshgrid(np.arange(w) + 0.5, np.arange(h) + 0.5)
    inside = np.zeros(shape, dtype=bool)
    n = len(pts)
    for i in range(n):
        x1, y1 = pts[i]
        x2, y2 = pts[(i + 1) % n]
        if y1 == y2:
            continue
        crosses = (y1 <= py) != (y2 <= py)
        with np.errstate(divide="ignore", invalid="ignore"):
            xi = x1 + (py - y1) * (x2 - x1) / (y2 - y1)
        inside ^= crosses & (px < xi)
    return inside


# Rings used only for rasterization (not part of the 98 landmarks): the
# scalp arc closing the jaw contour over the top, and a lower hairline
# arc bounding the hair band.  Both run left temple to right temple.
def _scalp_arc_3d(rx: float, ry: float) -> np.ndarray:
    theta = np.radians(180.0 + 11.25 * np.arange(1, 16))
    xy = np.column_stack([rx * np.cos(theta), 0.15 + ry * np.sin(theta)])
    return np.column_stack([xy, _template_depth(xy)])


def _head_outline_3d() -> np.ndarray:
    return _scalp_arc_3d(0.78, 1.02)


def _hairline_3d() -> np.ndarray:
    return _scalp_arc_3d(0.74, 0.80)


_SKIN = np.array([0.80, 0.62, 0.50])
_BROW = np.array([0.25, 0.17, 0.12])
_EYE_WHITE = np.array([0.93, 0.93, 0.90])
_IRIS = np.array([0.20, 0.30, 0.45])
_LIP = np.array([0.65, 0.30, 0.28])
_MOUTH_INNER = np.array([0.35, 0.12, 0.12])
_HAIR = np.array([0.16, 0.12, 0.10])
_BG_TOP = np.array([0.12, 0.14, 0.18])
_BG_BOTTOM = np.array([0.26, 0.29, 0.34])


def render_face(pose: PoseAngles, extent: tuple[int, int] = (256, 256),
                scale: float = DEFAULT_SCALE) -> tuple[ImageBuffer, LandmarkSet, SegMask]:
    """Draw a flat-shaded synthetic face; returns image, landmarks, mask."""
    w, h = extent
    lms = project_points(face_template_3d(), pose, extent, scale)
    outline = project_points(_head_outline_3d(), pose, extent, scale)
    hairline = project_points(_hairline_3d(), pose, extent, scale)
    # Contour runs left temple -> chin -> right temple; the reversed scalp
    # arc closes the loop back over the top without self-intersection.
    head_poly = np.vstack([lms[0:33], outline[::-1]])

    ramp = np.linspace(0.0, 1.0, h)[:, None, None]
    canvas = _BG_TOP * (1 - ramp) + _BG_BOTTOM * ramp
    canvas = np.broadcast_to(canvas, (h, w, 3)).copy()

    head = _fill_polygon((h, w), head_poly)
    hair = _fill_polygon((h, w), np.vstack([outline, hairline[::-1]])) & head
    canvas[hair] = _HAIR
    face_px = head & ~hair
    shade = np.repeat(1.0 - 0.12 * np.linspace(0, 1, h)[:, None], w, axis=1)
    canvas[face_px] = _SKIN * shade[face_px, None]

    left_brow = [33, 34, 35, 36, 37, 41, 40, 39, 38]
    for idx in (left_brow, list(range(42, 51))):
        canvas[_fill_polygon((h, w), lms[idx])] = _BROW
    for sl, pupil in ((slice(60, 68), 96), (slice(68, 76), 97)):
        canvas[_fill_polygon((h, w), lms[sl])] = _EYE_WHITE
        px, py = np.meshgrid(np.arange(w) + 0.5, np.arange(h) + 0.5)
        r = 0.045 * scale * min(w, h)
        iris = (px - lms[pupil, 0]) ** 2 + (py - lms[pupil, 1]) ** 2 <= r * r
        canvas[iris & _fill_polygon((h, w), lms[sl])] = _IRIS
    canvas[_fill_polygon((h, w), lms[76:88])] = _LIP
    canvas[_fill_polygon((h, w), lms[88:96])] = _MOUTH_INNER

    labels = np.zeros((h, w), dtype=np.uint8)
    labels[hair] = 2
    labels[face_px] = 1
    return (ImageBuffer(np.clip(canvas, 0.0, 1.0)),
            LandmarkSet(lms), SegMask(labels))


def _tight_box(lms: LandmarkSet, extent: tuple[int, int], margin: float = 0.18) -> BoundingBox:
    w, h = extent
    lo = lms.points.min(axis=0)
    hi = lms.points.max(axis=0)
    size = hi - lo
    lo = np.maximum(lo - margin * size, 0.0)
    hi = np.minimum(hi + margin * size, [w, h])
    lo = np.floor(lo)
    hi = np.ceil(hi)
    return BoundingBox.from_corners(float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1]))


def pose_sweep(n_frames: int, yaw_span: float = 30.0, pitch_span: float = 10.0,
               roll_span: float = 4.0) -> list[PoseAngles]:
    """Deterministic pose path: yaw sweep with gentle pitch/roll wiggle."""
    t = np.linspace(0.0, 1.0, n_frames) if n_frames > 1 else np.array([0.5])
    return [PoseAngles(yaw_span * (2 * ti - 1),
                       pitch_span * np.sin(2 * np.pi * ti),
                       roll_span * np.sin(4 * np.pi * ti + 1.0))
            for ti in t]


def write_sequence(out_dir: str | Path, poses: list[PoseAngles],
                   extent: tuple[int, int] = (256, 256),
                   scale: float = DEFAULT_SCALE,
                   full_frame_boxes: bool = False) -> FrameSequence:
    """Render a pose path to frame_%04d.png / .json / _mask.png files."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    frames = []
    for i, pose in enumerate(poses):
        img, lms, mask = render_face(pose, extent, scale)
        if full_frame_boxes:
            box = BoundingBox(extent[0] / 2, extent[1] / 2, extent[0], extent[1])
        else:
            box = _tight_box(lms, extent)
        img_path = out_dir / f"frame_{i:04d}.png"
        mask_name = f"frame_{i:04d}_mask.png"
        save_image(img, img_path)
        save_mask(mask, out_dir / mask_name)
        rec = FrameRecord(frame=i, bbox=box, landmarks=lms, pose=pose,
                          mask=mask, image_path=img_path)
        save_annotation(rec, out_dir / f"frame_{i:04d}.json", mask_path=mask_name)
        frames.append(rec)
    return FrameSequence(frames)

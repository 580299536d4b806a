"""Pose-indexed appearance maps.

Retained views of a subject are placed on the (yaw, pitch) plane, roll
is dropped, and the plane is triangulated together with the four fixed
boundary corners of the [-75, 75] degree square.  A pose query resolves
to its containing triangle and barycentric weights; boundary corners are
excluded from the weights, which are renormalized over the remaining
real views, so every rendered pose is a convex blend of actual frames.
"""

from __future__ import annotations

import json
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
    frame_image,
)
from .delaunay import barycentric, delaunay
from .heatmaps import encode_heatmap

HALF_EXTENT = 75.0
PRUNE_RADIUS = 5.0
_CONTAIN_TOL = 1e-12

MAP_VERSION = 1


class KdTree2:
    """Minimal 2-d k-d tree supporting insertion and radius lookups."""

    __slots__ = ("_pts", "_left", "_right", "_root")

    def __init__(self) -> None:
        self._pts: list[tuple[float, float]] = []
        self._left: list[int] = []
        self._right: list[int] = []
        self._root = -1

    def insert(self, x: float, y: float) -> None:
        idx = len(self._pts)
        self._pts.append((x, y))
        self._left.append(-1)
        self._right.append(-1)
        if self._root < 0:
            self._root = idx
            return
        node, axis = self._root, 0
        while True:
            goes_left = (x, y)[axis] < self._pts[node][axis]
            child = self._left[node] if goes_left else self._right[node]
            if child < 0:
                if goes_left:
                    self._left[node] = idx
                else:
                    self._right[node] = idx
                return
            node, axis = child, 1 - axis

    def has_within(self, x: float, y: float, radius: float) -> bool:
        """Whether any stored point lies within ``radius`` of (x, y)."""
        r2 = radius * radius
        stack = [(self._root, 0)]
        while stack:
            node, axis = stack.pop()
            if node < 0:
                continue
            px, py = self._pts[node]
            if (px - x) ** 2 + (py - y) ** 2 <= r2:
                return True
            delta = (x, y)[axis] - (px, py)[axis]
            near = self._left[node] if delta < 0 else self._right[node]
            far = self._right[node] if delta < 0 else self._left[node]
            stack.append((near, 1 - axis))
            if delta * delta <= r2:
                stack.append((far, 1 - axis))
        return False


def prune_views(seq: FrameSequence, radius: float = PRUNE_RADIUS) -> FrameSequence:
    """Thin views so no two retained (yaw, pitch) points are within ``radius``.

    Candidates are visited by increasing |roll| (ties by frame order), so
    a near-frontal-roll frame wins over a tilted one at the same pose.
    The result is idempotent under re-pruning with the same radius.
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    frames = list(seq.frames)
    for f in frames:
        if f.pose is None:
            raise ValueError(f"frame {f.frame} has no pose")
    order = sorted(range(len(frames)), key=lambda i: (abs(frames[i].pose.roll), i))
    tree = KdTree2()
    kept: list[int] = []
    for i in order:
        yaw, pitch = frames[i].pose.yaw, frames[i].pose.pitch
        if not tree.has_within(yaw, pitch, radius):
            tree.insert(yaw, pitch)
            kept.append(i)
    kept.sort()
    return FrameSequence([frames[i] for i in kept])


def mirror_fill(seq: FrameSequence, width: float | None = None,
                height: float | None = None) -> FrameSequence:
    """Append horizontally mirrored views when coverage is one-sided in yaw.

    A mirrored view negates yaw and roll, flips the image and mask, and
    remaps landmarks through the left/right index permutation.  Views at
    exactly zero yaw are their own mirror and are not duplicated.
    """
    frames = list(seq.frames)
    if not frames:
        return FrameSequence([])
    yaws = [f.pose.yaw for f in frames]
    if min(yaws) < 0 < max(yaws):
        return seq

    next_frame = max(f.frame for f in frames) + 1
    out = list(frames)
    for f in frames:
        if f.pose.yaw == 0.0:
            continue
        img = None
        w, h = width, height
        if f.image is not None or f.image_path is not None:
            src = frame_image(f)
            img = ImageBuffer(src.data[:, ::-1, :])
            w, h = float(src.width), float(src.height)
        if w is None:
            raise ValueError(f"frame {f.frame}: mirror needs an image or explicit width")
        lms = f.landmarks.flipped(w) if f.landmarks is not None else None
        box = BoundingBox(w - f.bbox.cx, f.bbox.cy, f.bbox.w, f.bbox.h)
        mask = SegMask(f.mask.labels[:, ::-1]) if f.mask is not None else None
        pose = PoseAngles(-f.pose.yaw, f.pose.pitch, -f.pose.roll)
        out.append(FrameRecord(frame=next_frame, bbox=box, landmarks=lms, pose=pose,
                               mask=mask, image=img))
        next_frame += 1
    return FrameSequence(out)


@dataclass(frozen=True)
class ViewAnswer:
    """Resolved pose query: containing triangle and view blend weights.

    ``entries`` pairs non-boundary vertex ids with weights renormalized
    to sum to 1 after boundary corners were dropped.
    """

    triangle_id: int
    entries: tuple[tuple[int, float], ...]

    @property
    def primary_vertex(self) -> int:
        return max(self.entries, key=lambda e: (e[1], -e[0]))[0]


@dataclass
class AppearanceMap:
    """Triangulated view coverage of the (yaw, pitch) square.

    Vertices 0..n_views-1 are real views (in frame order); the last four
    are the fixed boundary corners of the square.
    """

    vertices: np.ndarray                  # (n_views + 4, 2) yaw/pitch
    records: list[FrameRecord]            # one per non-boundary vertex
    triangles: list[tuple[int, int, int]]

    @property
    def n_views(self) -> int:
        return len(self.records)

    def is_boundary(self, vertex_id: int) -> bool:
        return vertex_id >= self.n_views

    def to_payload(self) -> dict:
        interior = self.vertices[: self.n_views]
        return {
            "version": MAP_VERSION,
            "half_extent": HALF_EXTENT,
            "vertices": [
                {
                    "id": i,
                    "yaw": float(v[0]),
                    "pitch": float(v[1]),
                    "boundary": self.is_boundary(i),
                    "frame": None if self.is_boundary(i) else self.records[i].frame,
                }
                for i, v in enumerate(self.vertices)
            ],
            "triangles": [list(t) for t in self.triangles],
            "coverage": {
                "views": self.n_views,
                "yaw": [float(interior[:, 0].min()), float(interior[:, 0].max())],
                "pitch": [float(interior[:, 1].min()), float(interior[:, 1].max())],
            },
        }


def build_map(views: FrameSequence) -> AppearanceMap:
    """Triangulate retained views together with the four boundary corners."""
    frames = list(views.frames)
    if not frames:
        raise ValueError("appearance map needs at least one view")
    coords = []
    for f in frames:
        if f.pose is None:
            raise ValueError(f"frame {f.frame} has no pose")
        yaw, pitch = f.pose.yaw, f.pose.pitch
        if abs(yaw) >= HALF_EXTENT or abs(pitch) >= HALF_EXTENT:
            raise ValueError(
                f"frame {f.frame} pose ({yaw}, {pitch}) outside the open "
                f"(+-{HALF_EXTENT})^2 square")
        coords.append((yaw, pitch))
    e = HALF_EXTENT
    corners = [(-e, -e), (e, -e), (e, e), (-e, e)]
    vertices = np.array(coords + corners, dtype=np.float64)
    triangles = delaunay(vertices)
    return AppearanceMap(vertices=vertices, records=frames, triangles=triangles)


def locate(amap: AppearanceMap, pose: PoseAngles) -> ViewAnswer:
    """Resolve a pose to its triangle and renormalized view weights.

    Roll is ignored.  Queries on shared edges resolve to the first
    containing triangle in canonical order.  A triangle whose vertices
    are all boundary corners cannot be rendered and raises.
    """
    q = np.array([pose.yaw, pose.pitch])
    if abs(q[0]) > HALF_EXTENT or abs(q[1]) > HALF_EXTENT:
        raise ValueError(f"pose ({q[0]}, {q[1]}) outside the (+-{HALF_EXTENT})^2 square")
    for tid, tri in enumerate(amap.triangles):
        lam = barycentric(amap.vertices[list(tri)], q)
        if (lam >= -_CONTAIN_TOL).all():
            interior = [(v, lam[k]) for k, v in enumerate(tri) if not amap.is_boundary(v)]
            if not interior:
                raise ValueError(f"pose ({q[0]}, {q[1]}) falls in an all-boundary triangle")
            total = sum(w for _, w in interior)
            if total <= _CONTAIN_TOL:
                # Query sits on the boundary span of the triangle; fall back
                # to an even split over its real views.
                entries = tuple((v, 1.0 / len(interior)) for v, _ in interior)
            else:
                entries = tuple((v, w / total) for v, w in interior)
            return ViewAnswer(triangle_id=tid, entries=entries)
    raise RuntimeError(f"no containing triangle for pose ({q[0]}, {q[1]})")


def view_at_extent(record: FrameRecord, extent: tuple[int, int]) -> tuple[ImageBuffer, LandmarkSet]:
    """View image and landmarks, resampled to the requested extent."""
    from .core import resize_bilinear

    img = frame_image(record)
    if record.landmarks is None:
        raise ValueError(f"frame {record.frame} has no landmarks")
    if img.extent == extent:
        return img, record.landmarks
    sx = extent[0] / img.width
    sy = extent[1] / img.height
    return (resize_bilinear(img, extent[0], extent[1]),
            LandmarkSet(record.landmarks.points * np.array([sx, sy])))


def interpolate_views(amap: AppearanceMap, answer: ViewAnswer, renderer,
                      target: LandmarkSet, extent: tuple[int, int]) -> ImageBuffer:
    """Blend the answer's views, each re-rendered toward target landmarks.

    The conditioning passed to the renderer is the encoded heatmap of the
    target landmarks when the renderer consumes heatmaps, otherwise the
    raw landmark set.  Blending runs in ascending vertex order.
    """
    if renderer.supports_heatmap_conditioning:
        conditioning = encode_heatmap(target, extent[0], extent[1])
    else:
        conditioning = target
    acc = np.zeros((extent[1], extent[0], 0), dtype=np.float64)
    first = True
    for vid, w in sorted(answer.entries):
        img, lms = view_at_extent(amap.records[vid], extent)
        rendered = renderer.render(img, lms, conditioning)
        if first:
            acc = w * rendered.data
            first = False
        else:
            acc = acc + w * rendered.data
    return ImageBuffer(np.clip(acc, 0.0, 1.0))


def save_map_payload(amap: AppearanceMap, path: str | Path) -> None:
    Path(path).write_text(json.dumps(amap.to_payload(), indent=1))

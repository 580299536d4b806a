"""Pluggable face renderers and the piecewise-affine warp reference.

A renderer consumes a posed view (image plus its landmarks) and a
conditioning target, either an encoded heatmap or a raw landmark set,
and produces an image of the same extent re-posed toward the target.
The reference implementation triangulates the target landmarks together
with fixed border anchors and inverse-maps each triangle affinely into
the source, which is the classical stand-in for a learned generator.
"""

from __future__ import annotations

import threading
from collections import OrderedDict
from dataclasses import dataclass
from typing import Protocol, runtime_checkable

import numpy as np
from scipy import ndimage

from .core import ImageBuffer, LandmarkSet, PoseAngles, SegMask, bilinear_sample
from .delaunay import delaunay, orientation
from .heatmaps import Heatmap, decode_landmarks, encode_heatmap
from .transformer import LandmarkTransformer, intermediate_landmarks

Conditioning = Heatmap | LandmarkSet


@runtime_checkable
class Renderer(Protocol):
    """Re-poses a view toward target geometry; output extent == input extent."""

    supports_heatmap_conditioning: bool

    def render(self, image: ImageBuffer, landmarks: LandmarkSet,
               target: Conditioning) -> ImageBuffer: ...


class IdentityRenderer:
    """Returns the view unchanged; useful as a blending-only baseline."""

    supports_heatmap_conditioning = True

    def render(self, image: ImageBuffer, landmarks: LandmarkSet,
               target: Conditioning) -> ImageBuffer:
        return image


def _border_anchors(width: int, height: int) -> np.ndarray:
    w, h = float(width), float(height)
    return np.array([
        [0.0, 0.0], [w / 2, 0.0], [w, 0.0], [w, h / 2],
        [w, h], [w / 2, h], [0.0, h], [0.0, h / 2],
    ])


def _dedupe(points: np.ndarray, tol: float = 1e-9) -> tuple[np.ndarray, np.ndarray]:
    """Representative subset and a map from original to subset indices."""
    reps: list[int] = []
    remap = np.empty(len(points), dtype=np.intp)
    for i, p in enumerate(points):
        for k, r in enumerate(reps):
            if abs(points[r, 0] - p[0]) <= tol and abs(points[r, 1] - p[1]) <= tol:
                remap[i] = k
                break
        else:
            remap[i] = len(reps)
            reps.append(i)
    return np.array(reps, dtype=np.intp), remap


def warp_render(image: ImageBuffer, src_points: np.ndarray, tgt_points: np.ndarray,
                triangles: list[tuple[int, int, int]] | None = None,
                report: dict | None = None) -> ImageBuffer:
    """Piecewise-affine warp moving src_points onto tgt_points.

    The target points plus eight border anchors are Delaunay
    triangulated; every output pixel center inside a triangle is mapped
    through that triangle's affine correspondence and sampled bilinearly
    from the source.  Triangles with a degenerate source are skipped and
    their pixels, along with any numerically missed ones, are filled
    from the nearest rendered pixel.
    """
    h, w = image.height, image.width
    anchors = _border_anchors(w, h)
    tgt_all = np.vstack([np.asarray(tgt_points, dtype=np.float64), anchors])
    src_all = np.vstack([np.asarray(src_points, dtype=np.float64), anchors])
    if triangles is None:
        triangles = triangulate_target(tgt_all)

    out = np.zeros_like(image.data)
    filled = np.zeros((h, w), dtype=bool)
    degenerate = 0
    for tri in triangles:
        t = tgt_all[list(tri)]
        s = src_all[list(tri)]
        t_area = orientation(t[0], t[1], t[2])
        if abs(t_area) < 1e-12:
            continue
        x0 = max(int(np.floor(t[:, 0].min() - 0.5)), 0)
        x1 = min(int(np.ceil(t[:, 0].max() - 0.5)) + 1, w)
        y0 = max(int(np.floor(t[:, 1].min() - 0.5)), 0)
        y1 = min(int(np.ceil(t[:, 1].max() - 0.5)) + 1, h)
        if x0 >= x1 or y0 >= y1:
            continue
        gx, gy = np.meshgrid(np.arange(x0, x1) + 0.5, np.arange(y0, y1) + 0.5)
        lam = _bary_grid(t, gx, gy)
        inside = (lam >= -1e-12).all(axis=0) & ~filled[y0:y1, x0:x1]
        if not inside.any():
            continue
        if abs(orientation(s[0], s[1], s[2])) < 1e-12:
            degenerate += 1  # collapsed source; leave for the fill pass
            continue
        sx = lam[0] * s[0, 0] + lam[1] * s[1, 0] + lam[2] * s[2, 0]
        sy = lam[0] * s[0, 1] + lam[1] * s[1, 1] + lam[2] * s[2, 1]
        vals = bilinear_sample(image.data, sx[inside], sy[inside])
        block = out[y0:y1, x0:x1]
        block[inside] = vals
        filled[y0:y1, x0:x1] |= inside

    missed = int((~filled).sum())
    if missed:
        _, (iy, ix) = ndimage.distance_transform_edt(~filled, return_indices=True)
        out[~filled] = out[iy[~filled], ix[~filled]]
    if report is not None:
        report["degenerate_triangles"] = degenerate
        report["fallback_pixels"] = missed
    return ImageBuffer(np.clip(out, 0.0, 1.0))


def _bary_grid(t: np.ndarray, gx: np.ndarray, gy: np.ndarray) -> np.ndarray:
    """Barycentric coordinates of a pixel grid w.r.t. one triangle."""
    (x1, y1), (x2, y2), (x3, y3) = t
    det = (y2 - y3) * (x1 - x3) + (x3 - x2) * (y1 - y3)
    l1 = ((y2 - y3) * (gx - x3) + (x3 - x2) * (gy - y3)) / det
    l2 = ((y3 - y1) * (gx - x3) + (x1 - x3) * (gy - y3)) / det
    l3 = 1.0 - l1 - l2
    return np.stack([l1, l2, l3])


def triangulate_target(tgt_all: np.ndarray) -> list[tuple[int, int, int]]:
    """Triangulation of target points with duplicates collapsed."""
    reps, remap = _dedupe(tgt_all)
    tris = delaunay(tgt_all[reps])
    return [tuple(int(reps[v]) for v in tri) for tri in tris]


class WarpRenderer:
    """Piecewise-affine warp renderer.

    Accepts heatmap conditioning (decoded back to sub-pixel landmarks)
    or raw landmark sets.  Target triangulations are memoized so that
    blending several views toward one target pays for a single
    triangulation.
    """

    supports_heatmap_conditioning = True

    def __init__(self, cache_size: int = 8) -> None:
        self._cache: OrderedDict[bytes, list[tuple[int, int, int]]] = OrderedDict()
        self._cache_size = cache_size
        self._lock = threading.Lock()

    def _target_points(self, target: Conditioning, extent: tuple[int, int]) -> np.ndarray:
        if isinstance(target, Heatmap):
            if target.extent != extent:
                raise ValueError(f"heatmap extent {target.extent} != image extent {extent}")
            return decode_landmarks(target).landmarks.points
        return target.points

    def _triangles(self, tgt_all: np.ndarray) -> list[tuple[int, int, int]]:
        key = tgt_all.tobytes()
        with self._lock:
            if key in self._cache:
                self._cache.move_to_end(key)
                return self._cache[key]
        tris = triangulate_target(tgt_all)
        with self._lock:
            self._cache[key] = tris
            while len(self._cache) > self._cache_size:
                self._cache.popitem(last=False)
        return tris

    def render(self, image: ImageBuffer, landmarks: LandmarkSet,
               target: Conditioning) -> ImageBuffer:
        tgt = self._target_points(target, image.extent)
        anchors = _border_anchors(image.width, image.height)
        tgt_all = np.vstack([tgt, anchors])
        tris = self._triangles(tgt_all)
        return warp_render(image, landmarks.points, tgt, triangles=tris)


def reenact_iterative(renderer: Renderer, image: ImageBuffer, p_s: LandmarkSet,
                      pose_s: PoseAngles, pose_t: PoseAngles, n: int,
                      model: LandmarkTransformer,
                      p_t: LandmarkSet | None = None) -> ImageBuffer:
    """Re-pose an image in n steps along the blended-pose landmark path.

    Each step renders the previous result toward the next predicted
    landmark set, so large pose changes are a chain of small warps.
    Exactly n renderer calls are made.
    """
    path = intermediate_landmarks(model, p_s, pose_s, pose_t, n, p_t)
    cur_img, cur_lms = image, p_s
    for p_i in path:
        if renderer.supports_heatmap_conditioning:
            cond: Conditioning = encode_heatmap(p_i, image.width, image.height)
        else:
            cond = p_i
        cur_img = renderer.render(cur_img, cur_lms, cond)
        cur_lms = p_i
    return cur_img


def rotate_image(image: ImageBuffer, degrees: float) -> ImageBuffer:
    """Rotate about the image center, bilinear, border pixels replicate."""
    if degrees == 0.0:
        return image
    h, w = image.height, image.width
    c, s = np.cos(np.radians(degrees)), np.sin(np.radians(degrees))
    cx, cy = w / 2.0, h / 2.0
    gx, gy = np.meshgrid(np.arange(w) + 0.5, np.arange(h) + 0.5)
    dx, dy = gx - cx, gy - cy
    # Inverse rotation of each output pixel center.
    sx = cx + c * dx + s * dy
    sy = cy - s * dx + c * dy
    return ImageBuffer(np.clip(bilinear_sample(image.data, sx, sy), 0.0, 1.0))


def rotate_landmarks(lms: LandmarkSet, degrees: float,
                     extent: tuple[int, int]) -> LandmarkSet:
    """Rotate landmark positions about the image center (matching
    :func:`rotate_image`'s forward direction)."""
    c, s = np.cos(np.radians(degrees)), np.sin(np.radians(degrees))
    center = np.array([extent[0] / 2.0, extent[1] / 2.0])
    d = lms.points - center
    rot = np.column_stack([c * d[:, 0] - s * d[:, 1], s * d[:, 0] + c * d[:, 1]])
    return LandmarkSet(rot + center)


@dataclass(frozen=True)
class EllipseOcclusionSpec:
    """Synthetic occlusion parameters.

    Semi-axes are sampled in pixels; when the range is None it defaults
    to 5-25% of the face bounding-box diagonal.
    """

    count_range: tuple[int, int] = (1, 3)
    semi_axis_range: tuple[float, float] | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        c0, c1 = self.count_range
        if c0 < 1 or c1 < c0:
            raise ValueError("count_range must satisfy 1 <= lo <= hi")
        if self.semi_axis_range is not None:
            a0, a1 = self.semi_axis_range
            if a0 <= 0 or a1 < a0:
                raise ValueError("semi_axis_range must satisfy 0 < lo <= hi")


def occlude_ellipses(mask: SegMask, spec: EllipseOcclusionSpec) -> SegMask:
    """Remove random ellipses centered on the face boundary from the mask.

    Mimics occluders (hands, hair, props) crossing the face edge; only
    face-labelled pixels are cleared.  Deterministic per seed.
    """
    face = mask.labels == 1
    if not face.any():
        raise ValueError("mask has no face pixels")
    eroded = ndimage.binary_erosion(face, structure=ndimage.generate_binary_structure(2, 1),
                                    border_value=0)
    by, bx = np.nonzero(face & ~eroded)
    rng = np.random.default_rng(spec.seed)
    count = int(rng.integers(spec.count_range[0], spec.count_range[1] + 1))
    if spec.semi_axis_range is None:
        ys, xs = np.nonzero(face)
        diag = float(np.hypot(xs.max() - xs.min() + 1, ys.max() - ys.min() + 1))
        lo, hi = 0.05 * diag, 0.25 * diag
    else:
        lo, hi = spec.semi_axis_range

    h, w = mask.labels.shape
    px, py = np.meshgrid(np.arange(w) + 0.5, np.arange(h) + 0.5)
    labels = mask.labels.copy()
    for _ in range(count):
        k = int(rng.integers(len(bx)))
        cx, cy = bx[k] + 0.5, by[k] + 0.5
        a, b = rng.uniform(lo, hi, size=2)
        phi = rng.uniform(0.0, np.pi)
        co, si = np.cos(phi), np.sin(phi)
        u = (px - cx) * co + (py - cy) * si
        v = -(px - cx) * si + (py - cy) * co
        inside = (u / a) ** 2 + (v / b) ** 2 <= 1.0
        labels[inside & (labels == 1)] = 0
    return SegMask(labels)

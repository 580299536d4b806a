"""End-to-end orchestration: swapping, pose paths, expression transfer.

A run loads annotated frame directories, smooths the tracks, distills
the source into an appearance map, and then processes target frames
independently: locate the pose, blend re-posed source views, Poisson
blend into the target crop, feather the seam, and paste the crop back
into the full frame.  Every stage is deterministic, so reruns produce
byte-identical outputs.
"""

from __future__ import annotations

import os
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .appearance import (
    AppearanceMap,
    ViewAnswer,
    build_map,
    interpolate_views,
    locate,
    mirror_fill,
    prune_views,
    view_at_extent,
)
from .core import (
    MOUTH_CORNERS,
    MOUTH_RANGE,
    BoundingBox,
    FrameRecord,
    FrameSequence,
    ImageBuffer,
    LandmarkSet,
    PoseAngles,
    SegMask,
    binary_face_mask,
    frame_image,
    load_annotation,
    save_image,
)
from .metrics import MetricReport, l1_distance
from .poisson import PoissonProblem, box_rect, composite, paste_back, poisson_solve, soft_erode
from .render import (
    IdentityRenderer,
    Renderer,
    WarpRenderer,
    rotate_image,
    rotate_landmarks,
)
from .tracking import SmoothingParams, smooth_sequence
from .transformer import LandmarkTransformer, load_checkpoint

MAX_CURATED_FRAMES = 100


@dataclass
class PipelineConfig:
    """Knobs for a swap/reenactment run."""

    source_dir: Path
    target_dir: Path
    output_dir: Path
    renderer: str = "warp"
    smoothing: SmoothingParams = field(default_factory=SmoothingParams)
    prune_radius: float = 5.0
    max_frames: int = MAX_CURATED_FRAMES
    erode_width: float = 7.0
    checkpoint: Path | None = None
    mirror: bool = True

    def __post_init__(self) -> None:
        self.source_dir = Path(self.source_dir)
        self.target_dir = Path(self.target_dir)
        self.output_dir = Path(self.output_dir)
        if self.renderer not in ("warp", "identity"):
            raise ValueError(f"unknown renderer {self.renderer!r}")


def make_renderer(name: str) -> Renderer:
    return WarpRenderer() if name == "warp" else IdentityRenderer()


def worker_count() -> int:
    """Parallelism cap from FACEPIPE_THREADS (default 1)."""
    try:
        n = int(os.environ.get("FACEPIPE_THREADS", "1"))
    except ValueError:
        return 1
    return max(1, n)


def load_sequence(directory: str | Path) -> FrameSequence:
    """Load every ``frame_*.json`` annotation (with its PNG) from a directory."""
    directory = Path(directory)
    records = []
    for ann in sorted(directory.glob("frame_*.json")):
        img = ann.with_suffix(".png")
        records.append(load_annotation(ann, image_path=img if img.exists() else None))
    if not records:
        raise ValueError(f"no frame_*.json annotations in {directory}")
    records.sort(key=lambda r: r.frame)
    return FrameSequence(records)


def curate_sequence(seq: FrameSequence, max_frames: int = MAX_CURATED_FRAMES) -> FrameSequence:
    """Keep up to max_frames frames spreading landmark variance.

    Greedy farthest-point selection on flattened landmark vectors: start
    from the frame farthest from the mean, then repeatedly add the frame
    farthest from the selected set.  Ties resolve to the lower index.
    """
    if max_frames < 1:
        raise ValueError("max_frames must be positive")
    frames = list(seq.frames)
    if len(frames) <= max_frames:
        return seq
    x = np.stack([f.landmarks.points.ravel() for f in frames])
    first = int(np.argmax(np.linalg.norm(x - x.mean(axis=0), axis=1)))
    chosen = [first]
    min_d = np.linalg.norm(x - x[first], axis=1)
    while len(chosen) < max_frames:
        nxt = int(np.argmax(min_d))
        chosen.append(nxt)
        min_d = np.minimum(min_d, np.linalg.norm(x - x[nxt], axis=1))
    chosen.sort()
    return FrameSequence([frames[i] for i in chosen])


def distill_source(seq: FrameSequence, config: PipelineConfig) -> AppearanceMap:
    """Smooth, curate, prune, mirror, and triangulate a source track."""
    seq = smooth_sequence(seq, config.smoothing)
    seq = curate_sequence(seq, config.max_frames)
    seq = prune_views(seq, config.prune_radius)
    if config.mirror:
        seq = mirror_fill(seq)
    return build_map(seq)


def _crop_record(rec: FrameRecord) -> tuple[ImageBuffer, ImageBuffer, LandmarkSet, SegMask | None,
                                            tuple[int, int]]:
    """Full frame, crop, crop-space landmarks and mask, crop offset."""
    frame = frame_image(rec)
    x0, y0, x1, y1 = box_rect(rec.bbox, frame.extent)
    crop = ImageBuffer(frame.data[y0:y1, x0:x1].copy())
    lms = LandmarkSet(rec.landmarks.points - np.array([x0, y0], dtype=np.float64))
    mask = SegMask(rec.mask.labels[y0:y1, x0:x1].copy()) if rec.mask is not None else None
    return frame, crop, lms, mask, (x0, y0)


def _swap_frame(amap: AppearanceMap, renderer: Renderer, config: PipelineConfig,
                rec: FrameRecord, out_path: Path) -> dict[str, float]:
    frame, crop, lms, mask, _ = _crop_record(rec)
    if mask is None:
        raise ValueError(f"frame {rec.frame} has no segmentation mask")
    if rec.pose is None:
        raise ValueError(f"frame {rec.frame} has no pose")
    answer = locate(amap, rec.pose)
    guidance = interpolate_views(amap, answer, renderer, lms, crop.extent)
    face = binary_face_mask(mask)
    result = poisson_solve(PoissonProblem(target=crop, guidance=guidance, mask=face))
    soft = soft_erode(face, config.erode_width)
    blended = composite(result.image, crop, soft)
    final = paste_back(frame, rec.bbox, blended)
    save_image(final, out_path)
    return {
        "l1": l1_distance(blended, crop),
        "poisson_iterations": float(result.iterations),
        "poisson_residual": result.residual,
        "clamped_fraction": result.clamped_fraction,
    }


def run_swap(config: PipelineConfig) -> MetricReport:
    """Swap the source identity onto every annotated target frame.

    Per-frame failures are recorded and skipped; the run fails only if
    no frame succeeds.  Output files are ``swap_<frame>.png``.
    """
    source = load_sequence(config.source_dir)
    target = load_sequence(config.target_dir)
    amap = distill_source(source, config)
    target = smooth_sequence(target, config.smoothing)
    renderer = make_renderer(config.renderer)
    config.output_dir.mkdir(parents=True, exist_ok=True)

    report = MetricReport()
    results: dict[int, dict[str, float] | str] = {}

    def work(rec: FrameRecord) -> None:
        out = config.output_dir / f"swap_{rec.frame:04d}.png"
        try:
            results[rec.frame] = _swap_frame(amap, renderer, config, rec, out)
        except (ValueError, RuntimeError) as e:
            results[rec.frame] = f"frame {rec.frame}: {e}"

    threads = worker_count()
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(work, target.frames))
    else:
        for rec in target.frames:
            work(rec)

    for rec in target.frames:
        r = results[rec.frame]
        if isinstance(r, str):
            report.errors.append(r)
        else:
            for k, v in r.items():
                report.add(k, v)
    if not report.series:
        raise RuntimeError("every target frame failed: " + "; ".join(report.errors))
    return report


# --------------------------------------------------------------------------
# Pose-path reenactment
# --------------------------------------------------------------------------

class PoseViewRenderer:
    """Renders arbitrary in-square poses from an appearance map.

    Views inside one triangle are each re-posed toward the triangle's
    anchor geometry (its lowest-id real view), blended barycentrically,
    and roll-aligned by rotating about the image center.  Re-posed views
    are cached per (view, anchor) pair, so sustained queries inside a
    triangle only pay for blending and rotation.
    """

    def __init__(self, amap: AppearanceMap, renderer: Renderer,
                 extent: tuple[int, int]) -> None:
        self.amap = amap
        self.renderer = renderer
        self.extent = extent
        self._cache: dict[tuple[int, int], np.ndarray] = {}
        self._lock = threading.Lock()

    def _anchor(self, answer: ViewAnswer) -> int:
        tri = self.amap.triangles[answer.triangle_id]
        interior = [v for v in tri if not self.amap.is_boundary(v)]
        return min(interior)

    def _rendered_view(self, vid: int, anchor: int) -> np.ndarray:
        key = (vid, anchor)
        with self._lock:
            if key in self._cache:
                return self._cache[key]
        img, lms = view_at_extent(self.amap.records[vid], self.extent)
        _, target_lms = view_at_extent(self.amap.records[anchor], self.extent)
        data = self.renderer.render(img, lms, target_lms).data
        with self._lock:
            self._cache.setdefault(key, data)
        return data

    def render(self, pose: PoseAngles) -> tuple[ImageBuffer, LandmarkSet, ViewAnswer]:
        answer = locate(self.amap, pose)
        anchor = self._anchor(answer)
        acc: np.ndarray | None = None
        base_roll = 0.0
        for vid, w in sorted(answer.entries):
            data = self._rendered_view(vid, anchor)
            acc = w * data if acc is None else acc + w * data
            base_roll += w * self.amap.records[vid].pose.roll
        assert acc is not None
        _, anchor_lms = view_at_extent(self.amap.records[anchor], self.extent)
        droll = pose.roll - base_roll
        image = rotate_image(ImageBuffer(np.clip(acc, 0.0, 1.0)), droll)
        lms = rotate_landmarks(anchor_lms, droll, self.extent)
        return image, lms, answer


def run_pose_reenact(amap: AppearanceMap, poses: list[PoseAngles], renderer: Renderer,
                     output_dir: str | Path, extent: tuple[int, int]) -> list[Path]:
    """Render a pose path; returns the written file paths (pose_%04d.png)."""
    viewer = PoseViewRenderer(amap, renderer, extent)
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, pose in enumerate(poses):
        image, _, _ = viewer.render(pose)
        p = output_dir / f"pose_{i:04d}.png"
        save_image(image, p)
        paths.append(p)
    return paths


# --------------------------------------------------------------------------
# Expression (mouth) transfer
# --------------------------------------------------------------------------

def swap_mouth_landmarks(p_t: LandmarkSet, p_s: LandmarkSet) -> LandmarkSet:
    """Replace the target's mouth points with similarity-aligned source ones.

    The source mouth is translated to the target mouth centroid and
    scaled by the ratio of outer-corner distances; no rotation is
    applied.  All non-mouth points pass through bit-equal.
    """
    mouth = list(MOUTH_RANGE)
    src = p_s.points[mouth]
    tgt = p_t.points[mouth]
    if np.array_equal(src, tgt):
        return p_t
    a, b = MOUTH_CORNERS
    d_s = float(np.linalg.norm(p_s.points[a] - p_s.points[b]))
    d_t = float(np.linalg.norm(p_t.points[a] - p_t.points[b]))
    scale = d_t / d_s if d_s > 0.0 else 1.0
    out = p_t.points.copy()
    out[mouth] = (src - src.mean(axis=0)) * scale + tgt.mean(axis=0)
    return LandmarkSet(out)


def run_expression_reenact(source_rec: FrameRecord, target_seq: FrameSequence,
                           renderer: Renderer, output_dir: str | Path) -> list[Path]:
    """Re-render each target frame with the source's mouth expression."""
    from .heatmaps import encode_heatmap

    if source_rec.landmarks is None:
        raise ValueError("source record has no landmarks")
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for rec in target_seq.frames:
        frame, crop, lms, _, _ = _crop_record(rec)
        swapped = swap_mouth_landmarks(lms, source_rec.landmarks)
        if renderer.supports_heatmap_conditioning:
            cond = encode_heatmap(swapped, crop.width, crop.height)
        else:
            cond = swapped
        rendered = renderer.render(crop, lms, cond)
        final = paste_back(frame, rec.bbox, rendered)
        p = output_dir / f"expr_{rec.frame:04d}.png"
        save_image(final, p)
        paths.append(p)
    return paths


def load_transformer(config: PipelineConfig,
                     extent: tuple[int, int] = (256, 256)) -> LandmarkTransformer | None:
    if config.checkpoint is None:
        return None
    return load_checkpoint(config.checkpoint, extent=extent)

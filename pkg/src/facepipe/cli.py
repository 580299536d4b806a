"""Command-line entry points.

Exit codes: 0 success, 1 a run completed with per-item failures (or
failed entirely at runtime), 2 bad usage or invalid configuration.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import metrics as met
from . import synthetic
from .appearance import save_map_payload
from .core import (
    PoseAngles,
    load_annotation,
    load_image,
    save_annotation,
    save_image,
    save_mask,
)
from .pipeline import (
    PipelineConfig,
    curate_sequence,
    distill_source,
    load_sequence,
    make_renderer,
    run_expression_reenact,
    run_pose_reenact,
    run_swap,
)
from .service import MapService, create_server
from .tracking import SmoothingParams
from .transformer import LandmarkTransformer, TrainConfig, save_checkpoint, train


def _add_map_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--prune-radius", type=float, default=5.0,
                   help="minimum (yaw, pitch) spacing between retained views")
    p.add_argument("--max-frames", type=int, default=100,
                   help="cap on curated source frames")
    p.add_argument("--no-mirror", action="store_true",
                   help="disable mirror augmentation for one-sided yaw coverage")


def _map_config(args: argparse.Namespace, source: Path, target: Path,
                out: Path) -> PipelineConfig:
    return PipelineConfig(
        source_dir=source, target_dir=target, output_dir=out,
        renderer=getattr(args, "renderer", "warp"),
        prune_radius=args.prune_radius, max_frames=args.max_frames,
        erode_width=getattr(args, "erode_width", 7.0),
        mirror=not args.no_mirror,
    )


def _load_poses(path: Path) -> list[PoseAngles]:
    doc = json.loads(path.read_text())
    poses = []
    for item in doc:
        if isinstance(item, dict):
            poses.append(PoseAngles(float(item["yaw"]), float(item["pitch"]),
                                    float(item.get("roll", 0.0))))
        else:
            y, p, r = (list(item) + [0.0])[:3]
            poses.append(PoseAngles(float(y), float(p), float(r)))
    if not poses:
        raise ValueError(f"no poses in {path}")
    return poses


def _cmd_synth_data(args: argparse.Namespace) -> int:
    extent = (args.width, args.height)
    poses = synthetic.pose_sweep(args.frames, yaw_span=args.yaw_span,
                                 pitch_span=args.pitch_span, roll_span=args.roll_span)
    synthetic.write_sequence(args.out, poses, extent=extent,
                             full_frame_boxes=args.full_frame_boxes)
    print(f"wrote {args.frames} synthetic frames to {args.out}")
    if args.corpus_out is not None:
        corpus = synthetic.generate_pose_corpus(args.corpus_size, seed=args.seed,
                                                extent=extent)
        synthetic.save_corpus(corpus, args.corpus_out)
        print(f"wrote corpus of {args.corpus_size} pairs to {args.corpus_out}")
    return 0


def _cmd_curate(args: argparse.Namespace) -> int:
    seq = load_sequence(args.input)
    kept = curate_sequence(seq, args.max_frames)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for rec in kept.frames:
        stem = f"frame_{rec.frame:04d}"
        if rec.image is not None or rec.image_path is not None:
            img = rec.image if rec.image is not None else load_image(rec.image_path)
            save_image(img, out / f"{stem}.png")
        mask_name = None
        if rec.mask is not None:
            mask_name = f"{stem}_mask.png"
            save_mask(rec.mask, out / mask_name)
        save_annotation(rec, out / f"{stem}.json", mask_path=mask_name)
    print(f"kept {len(kept)} of {len(seq)} frames")
    return 0


def _cmd_build_map(args: argparse.Namespace) -> int:
    config = _map_config(args, args.views, args.views, Path("."))
    amap = distill_source(load_sequence(args.views), config)
    save_map_payload(amap, args.out)
    print(f"map with {len(amap.records)} views, "
          f"{len(amap.triangles)} triangles -> {args.out}")
    return 0


def _cmd_train_transformer(args: argparse.Namespace) -> int:
    corpus = synthetic.load_corpus(args.corpus)
    model = LandmarkTransformer.create(hidden=args.hidden, extent=corpus.extent,
                                       seed=args.seed)
    config = TrainConfig(lr=args.lr, batch_size=args.batch_size,
                         steps=args.steps, seed=args.seed)
    result = train(model, corpus, config)
    save_checkpoint(model, args.out)
    if args.curve is not None:
        result.save_curve(args.curve)
    print(f"final training mse {result.losses[-1]:.6f} -> {args.out}")
    return 0


def _cmd_swap(args: argparse.Namespace) -> int:
    config = _map_config(args, args.source, args.target, args.out)
    report = run_swap(config)
    if args.report is not None:
        Path(args.report).write_text(report.to_json())
    print(report.format_summary())
    if report.errors:
        for e in report.errors:
            print(f"error: {e}", file=sys.stderr)
        return 1
    return 0


def _cmd_reenact_path(args: argparse.Namespace) -> int:
    config = _map_config(args, args.views, args.views, args.out)
    amap = distill_source(load_sequence(args.views), config)
    poses = _load_poses(args.poses)
    paths = run_pose_reenact(amap, poses, make_renderer(args.renderer), args.out,
                             (args.width, args.height))
    print(f"rendered {len(paths)} poses to {args.out}")
    return 0


def _cmd_reenact_expression(args: argparse.Namespace) -> int:
    source = load_annotation(args.source_frame)
    target = load_sequence(args.target)
    paths = run_expression_reenact(source, target, make_renderer(args.renderer),
                                   args.out)
    print(f"rendered {len(paths)} frames to {args.out}")
    return 0


def _paired_pngs(dir_a: Path, dir_b: Path) -> list[tuple[Path, Path]]:
    names_a = {p.name: p for p in sorted(dir_a.glob("*.png"))}
    names_b = {p.name: p for p in sorted(dir_b.glob("*.png"))}
    common = sorted(set(names_a) & set(names_b))
    if not common:
        raise ValueError(f"no PNGs with matching names between {dir_a} and {dir_b}")
    return [(names_a[n], names_b[n]) for n in common]


def _cmd_metrics(args: argparse.Namespace) -> int:
    report = met.MetricReport()
    if args.images_a is not None:
        for pa, pb in _paired_pngs(args.images_a, args.images_b):
            report.add("l1", met.l1_distance(load_image(pa), load_image(pb)))
    if args.annotations_a is not None:
        seq_a = load_sequence(args.annotations_a)
        seq_b = load_sequence(args.annotations_b)
        by_frame = {r.frame: r for r in seq_b.frames}
        for ra in seq_a.frames:
            rb = by_frame.get(ra.frame)
            if rb is None:
                report.errors.append(f"frame {ra.frame} missing from {args.annotations_b}")
                continue
            if ra.pose is not None and rb.pose is not None:
                report.add("euler", met.euler_distance(ra.pose, rb.pose))
            if ra.landmarks is not None and rb.landmarks is not None:
                report.add("landmark", met.landmark_distance(ra.landmarks, rb.landmarks))
    if args.id_a is not None:
        ea, eb = met.load_embeddings(args.id_a), met.load_embeddings(args.id_b)
        if ea.vectors.shape != eb.vectors.shape:
            raise ValueError("identity embedding sets must pair row for row")
        for va, vb in zip(ea.vectors, eb.vectors):
            report.add("identity_cosine", met.identity_similarity(va, vb))
    if args.fec_a is not None:
        ea, eb = met.load_embeddings(args.fec_a), met.load_embeddings(args.fec_b)
        if ea.vectors.shape != eb.vectors.shape:
            raise ValueError("expression embedding sets must pair row for row")
        for va, vb in zip(ea.vectors, eb.vectors):
            report.add("expression", met.expression_distance(va, vb))
    if args.fid_a is not None:
        ea, eb = met.load_embeddings(args.fid_a), met.load_embeddings(args.fid_b)
        report.fid = met.frechet_distance(ea, eb)
    if not report.series and report.fid is None:
        raise ValueError("no metric inputs given; see facepipe metrics --help")
    Path(args.report).write_text(report.to_json())
    print(report.format_summary())
    return 1 if report.errors else 0


def _cmd_serve(args: argparse.Namespace) -> int:
    config = _map_config(args, args.views, args.views, Path("."))
    amap = distill_source(load_sequence(args.views), config)
    service = MapService(amap, make_renderer(args.renderer),
                         (args.width, args.height))
    server = create_server(service, host=args.host, port=args.port, ui_dir=args.ui)
    host, port = server.server_address[:2]
    print(f"serving appearance map on http://{host}:{port}")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="facepipe",
                                     description="face reenactment and swapping toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", help="render a synthetic annotated sequence")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--frames", type=int, default=20)
    p.add_argument("--width", type=int, default=256)
    p.add_argument("--height", type=int, default=256)
    p.add_argument("--yaw-span", type=float, default=30.0)
    p.add_argument("--pitch-span", type=float, default=10.0)
    p.add_argument("--roll-span", type=float, default=4.0)
    p.add_argument("--full-frame-boxes", action="store_true",
                   help="use whole-frame boxes instead of tight face boxes")
    p.add_argument("--corpus-out", type=Path, default=None,
                   help="also write a landmark/pose training corpus (.npz)")
    p.add_argument("--corpus-size", type=int, default=512)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_synth_data)

    p = sub.add_parser("curate", help="select a representative frame subset")
    p.add_argument("--input", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--max-frames", type=int, default=100)
    p.set_defaults(func=_cmd_curate)

    p = sub.add_parser("build-map", help="build and save an appearance map")
    p.add_argument("--views", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    _add_map_args(p)
    p.set_defaults(func=_cmd_build_map)

    p = sub.add_parser("train-transformer", help="train the landmark transformer")
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--hidden", type=int, default=256)
    p.add_argument("--lr", type=float, default=2e-4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--curve", type=Path, default=None,
                   help="write a step,mse loss curve CSV")
    p.set_defaults(func=_cmd_train_transformer)

    p = sub.add_parser("swap", help="swap a source identity onto target frames")
    p.add_argument("--source", type=Path, required=True)
    p.add_argument("--target", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--renderer", choices=("warp", "identity"), default="warp")
    p.add_argument("--erode-width", type=float, default=7.0)
    p.add_argument("--report", type=Path, default=None)
    _add_map_args(p)
    p.set_defaults(func=_cmd_swap)

    p = sub.add_parser("reenact-path", help="render a pose path from an appearance map")
    p.add_argument("--views", type=Path, required=True)
    p.add_argument("--poses", type=Path, required=True,
                   help="JSON list of [yaw, pitch, roll] triples")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--width", type=int, default=256)
    p.add_argument("--height", type=int, default=256)
    p.add_argument("--renderer", choices=("warp", "identity"), default="warp")
    _add_map_args(p)
    p.set_defaults(func=_cmd_reenact_path)

    p = sub.add_parser("reenact-expression",
                       help="re-render target frames with a source mouth expression")
    p.add_argument("--source-frame", type=Path, required=True,
                   help="annotation JSON providing the mouth expression")
    p.add_argument("--target", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--renderer", choices=("warp", "identity"), default="warp")
    p.set_defaults(func=_cmd_reenact_expression)

    p = sub.add_parser("metrics", help="compute comparison metrics and write a report")
    p.add_argument("--report", type=Path, required=True)
    p.add_argument("--images-a", type=Path)
    p.add_argument("--images-b", type=Path)
    p.add_argument("--annotations-a", type=Path)
    p.add_argument("--annotations-b", type=Path)
    p.add_argument("--id-a", type=Path)
    p.add_argument("--id-b", type=Path)
    p.add_argument("--fec-a", type=Path)
    p.add_argument("--fec-b", type=Path)
    p.add_argument("--fid-a", type=Path)
    p.add_argument("--fid-b", type=Path)
    p.set_defaults(func=_cmd_metrics)

    p = sub.add_parser("serve", help="serve an appearance map over HTTP")
    p.add_argument("--views", type=Path, required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--width", type=int, default=256)
    p.add_argument("--height", type=int, default=256)
    p.add_argument("--renderer", choices=("warp", "identity"), default="warp")
    p.add_argument("--ui", type=Path, default=None,
                   help="directory of static UI files to serve at /")
    _add_map_args(p)
    p.set_defaults(func=_cmd_serve)

    return parser


def _paired_args_ok(args: argparse.Namespace) -> None:
    pairs = [("images_a", "images_b"), ("annotations_a", "annotations_b"),
             ("id_a", "id_b"), ("fec_a", "fec_b"), ("fid_a", "fid_b")]
    for a, b in pairs:
        if (getattr(args, a, None) is None) != (getattr(args, b, None) is None):
            raise ValueError(f"--{a.replace('_', '-')} and --{b.replace('_', '-')} "
                             f"must be given together")


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "metrics":
            _paired_args_ok(args)
        return args.func(args)
    except (ValueError, OSError, KeyError, np.linalg.LinAlgError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except RuntimeError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

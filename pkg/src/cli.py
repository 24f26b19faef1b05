"""Command-line entry point: synth, render, depth, eval, gradcheck, selftest.

Exit codes: 0 success, 1 validation or usage error, 2 internal error.
"""

from __future__ import annotations

import argparse
import logging
from pathlib import Path
import sys
from typing import Sequence

import numpy as np
import torch

from src.config import ROOT, PipelineConfig, RasterConfig, get_settings, resolve_threads
from src.depth.plane_sweep import estimate_depths, estimate_depths_raw, sample_candidates
from src.errors import SemsplatError, ValidationError
from src.features.backbone import extract_features
from src.features.weights import init_weights, load_weights
from src.gaussians.decoder import decode_shared
from src.geometry.cameras import CameraView
from src.geometry.rotations import quaternions_to_matrices
from src.ingestion.bundle import bundle_from_scene, load_bundle, save_bundle
from src.ingestion.importer import load_pgm, quantize_depth, quantize_image, save_pgm, save_ppm
from src.ingestion.snapshots import write_snapshot
from src.losses.gradcheck import GRAD_TOL, run_all
from src.losses.metrics import segmentation_metrics
from src.losses.objectives import LabelMap
from src.pipeline.feed_forward import forward_with_intermediates, latency_benchmark, render_novel
from src.rapport.export import export_csv_report, export_html_report, per_class_table, report_lines
from src.synth.scenes import generate_room

LOG = logging.getLogger("semsplat.cli")

LATENCY_BUDGET_S = 5.0


class UsageError(ValidationError):
    pass


class _Parser(argparse.ArgumentParser):
    """ArgumentParser that raises instead of exiting with status 2."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


def _index_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated view ids, got {text!r}") from exc


def _pose(text: str) -> np.ndarray:
    try:
        values = np.array([float(t) for t in text.split(",")])
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"pose must be 7 numbers qw,qx,qy,qz,tx,ty,tz: {text!r}") from exc
    if values.shape != (7,):
        raise argparse.ArgumentTypeError(f"pose must be 7 numbers qw,qx,qy,qz,tx,ty,tz, got {len(values)}")
    return values


def _add_model_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--candidates", type=int, default=32, help="Number of depth candidates L")
    p.add_argument("--d", type=int, default=128, help="Feature width (multiple of 8)")
    p.add_argument("--seed", type=int, default=None, help="Weight seed (default: env SEMSPLAT_SEED)")
    p.add_argument("--weights", type=Path, default=None, help="Weight snapshot prefix (default: seeded init)")
    p.add_argument("--decode-at", choices=("pixels", "features"), default="pixels")
    p.add_argument("--no-shared-cnn", action="store_true", help="Separate low-level CNN for the semantic branch")
    p.add_argument("--no-swin", action="store_true", help="Global self-attention instead of shifted windows")
    p.add_argument("--no-camera-injection", action="store_true", help="Plain attention without camera transforms")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="semsplat", description="Feed-forward semantic Gaussian splatting toolkit")
    p.add_argument("--threads", type=int, default=None, help="Worker threads (default: env SEMSPLAT_THREADS, 0 = auto)")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="Generate a synthetic labeled room bundle")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--classes", type=int, default=6)
    s.add_argument("--objects", type=int, default=4)
    s.add_argument("--resolution", type=int, default=64)
    s.add_argument("--cameras", type=int, default=6)
    s.add_argument("--out", type=Path, required=True)

    r = sub.add_parser("render", help="Run the feed-forward pipeline and render a target view")
    r.add_argument("--bundle", type=Path, required=True)
    r.add_argument("--inputs", type=_index_list, required=True, help="Input view ids, e.g. 0,2")
    target = r.add_mutually_exclusive_group(required=True)
    target.add_argument("--target", type=int, help="Target view id")
    target.add_argument("--pose", type=_pose, help="Target pose qw,qx,qy,qz,tx,ty,tz (world to camera)")
    r.add_argument("--out", type=Path, required=True, help="Output prefix")
    _add_model_args(r)

    d = sub.add_parser("depth", help="Plane-sweep depth maps for bundle views")
    d.add_argument("--bundle", type=Path, required=True)
    d.add_argument("--views", type=_index_list, default=None, help="View ids (default: all)")
    d.add_argument("--near", type=float, default=None)
    d.add_argument("--far", type=float, default=None)
    d.add_argument("--raw-features", action="store_true", help="Sweep raw image patches, bypassing the backbone")
    d.add_argument("--temperature", type=float, default=0.02)
    d.add_argument("--out", type=Path, required=True, help="Output directory")
    _add_model_args(d)

    e = sub.add_parser("eval", help="Segmentation metrics between two label maps")
    e.add_argument("--pred", type=Path, required=True)
    e.add_argument("--gt", type=Path, required=True)
    e.add_argument("--classes", type=int, required=True)
    e.add_argument("--csv", type=Path, default=None, help="Write the per-class table as CSV")
    e.add_argument("--html", type=Path, default=None, help="Write an HTML report")

    g = sub.add_parser("gradcheck", help="Finite-difference checks of every analytic gradient")
    g.add_argument("--seed", type=int, default=0)

    t = sub.add_parser("selftest", help="Run the property test suite")
    t.add_argument("--timing", action="store_true", help="Also measure feed-forward latency")
    t.add_argument("-k", dest="keyword", default=None, help="Only run tests matching this expression")
    return p


def _pipeline_config(args, num_classes: int, near: float, far: float) -> PipelineConfig:
    return PipelineConfig(
        d=args.d,
        num_candidates=args.candidates,
        near=near,
        far=far,
        num_classes=num_classes,
        decode_at=args.decode_at,
        seed=args.seed if args.seed is not None else get_settings().seed,
        shared_cnn=not args.no_shared_cnn,
        swin=not args.no_swin,
        camera_injection=not args.no_camera_injection,
        raster=RasterConfig(threads=args.threads),
    ).validate()


def _weights(args, config: PipelineConfig):
    if args.weights is not None:
        return load_weights(args.weights, config)
    return init_weights(config.seed, config)


def cmd_synth(args) -> int:
    scene = generate_room(args.seed, args.classes, args.objects, args.resolution, args.cameras)
    save_bundle(bundle_from_scene(scene), args.out)
    print(f"views={len(scene.cameras)} gaussians={len(scene.gaussians)} classes={scene.num_classes} held_out={scene.held_out}")
    return 0


def cmd_render(args) -> int:
    bundle = load_bundle(args.bundle)
    config = _pipeline_config(args, bundle.num_classes, bundle.near, bundle.far)
    images = bundle.images(args.inputs)
    cameras = bundle.cameras(args.inputs)
    if args.target is not None:
        target = bundle.view(args.target).camera
    else:
        ref = cameras[0]
        target = CameraView(ref.intrinsics, quaternions_to_matrices(args.pose[:4]), args.pose[4:], ref.width, ref.height)
    out = forward_with_intermediates(images, cameras, config, _weights(args, config))
    maps = render_novel(out.gaussians, target, config)
    prefix = args.out
    prefix.parent.mkdir(parents=True, exist_ok=True)
    save_ppm(f"{prefix}_rgb.ppm", quantize_image(maps.rgb))
    save_pgm(f"{prefix}_labels.pgm", maps.labels.astype(np.uint8))
    save_pgm(f"{prefix}_depth.pgm", quantize_depth(maps.depth))
    write_snapshot(f"{prefix}_probs", {"sem_probs": maps.sem_probs, "alpha": maps.alpha_acc}, meta={"kind": "render"})
    print(
        f"gaussians={len(out.gaussians)} views={len(cameras)} width={target.width} height={target.height} "
        f"coverage={float(np.mean(maps.alpha_acc)):.4f}"
    )
    return 0


def cmd_depth(args) -> int:
    bundle = load_bundle(args.bundle)
    views = args.views if args.views is not None else list(range(len(bundle)))
    near = args.near if args.near is not None else bundle.near
    far = args.far if args.far is not None else bundle.far
    images = bundle.images(views)
    cameras = bundle.cameras(views)
    candidates = sample_candidates(near, far, args.candidates)
    h, w = images.shape[-2:]
    if args.raw_features:
        depths = np.stack([r.depth_map() for r in estimate_depths_raw(images, cameras, candidates, args.temperature)])
    else:
        config = _pipeline_config(args, bundle.num_classes, near, far)
        weights = _weights(args, config)
        features = extract_features(images, cameras, weights, config)
        results = estimate_depths(features.color, cameras, candidates, weights)
        depths = decode_shared(results, cameras, weights, (h, w)).depths
    args.out.mkdir(parents=True, exist_ok=True)
    for view, depth in zip(views, depths):
        save_pgm(args.out / f"{bundle.view(view).name}_depth.pgm", quantize_depth(depth))
        line = f"view={view} median_depth={float(np.median(depth)):.4f}"
        if bundle.view(view).depth is not None:
            gt = bundle.depth_map(view)
            valid = gt > 0
            if np.any(valid):
                line += f" abs_rel={float(np.mean(np.abs(depth[valid] - gt[valid]) / gt[valid])):.4f}"
        print(line)
    return 0


def cmd_eval(args) -> int:
    gt = LabelMap(load_pgm(args.gt), args.classes)
    pred = LabelMap(load_pgm(args.pred), args.classes)
    metrics = segmentation_metrics(gt, pred, args.classes)
    for line in report_lines(metrics):
        print(line)
    if args.csv or args.html:
        table = per_class_table(metrics)
        if args.csv:
            export_csv_report(table, args.csv)
        if args.html:
            export_html_report(table, args.html, summary=metrics.as_dict())
    return 0


def cmd_gradcheck(args) -> int:
    results = run_all(args.seed)
    for name, err in results.items():
        print(f"{name}={err:.3e}")
    worst = max(results.values())
    print(f"max_rel_err={worst:.3e}")
    return 0 if worst <= GRAD_TOL else 1


def cmd_selftest(args) -> int:
    import pytest

    pytest_args = [str(ROOT / "tests"), "-q"]
    if args.keyword:
        pytest_args += ["-k", args.keyword]
    code = int(pytest.main(pytest_args))
    if args.timing:
        timings = latency_benchmark()
        for line in report_lines(extra={f"timing_{k}": v for k, v in timings.items()}):
            print(line)
        if timings["total"] > LATENCY_BUDGET_S:
            LOG.warning("feed-forward latency %.2fs above the %.1fs budget", timings["total"], LATENCY_BUDGET_S)
    return 0 if code == 0 else 1


COMMANDS = {
    "synth": cmd_synth,
    "render": cmd_render,
    "depth": cmd_depth,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "selftest": cmd_selftest,
}


def main(argv: Sequence[str] | None = None) -> int:
    try:
        settings = get_settings()
        logging.basicConfig(level=settings.log_level, format="%(asctime)s | %(levelname)s | %(name)s | %(message)s")
        args = build_parser().parse_args(argv)
        torch.set_num_threads(resolve_threads(args.threads))
        return COMMANDS[args.command](args)
    except SystemExit as exc:
        return int(exc.code or 0)
    except SemsplatError as exc:
        LOG.error("%s", exc)
        return 1
    except Exception:
        LOG.exception("internal error")
        return 2


if __name__ == "__main__":
    sys.exit(main())

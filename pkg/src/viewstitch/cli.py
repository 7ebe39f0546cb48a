"""Command-line entry point: ``viewstitch <subcommand> ...``.

Failures print a single ``error: <category>: <message>`` line on stderr.
Exit codes: 0 success, 1 domain or I/O error, 2 usage error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

# BLAS thread pools read these once, at import time
_THREADS = os.environ.get("VIEWSTITCH_THREADS")
if _THREADS:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _THREADS)

import numpy as np  # noqa: E402

from .errors import ConfigError, DataIOError, ViewStitchError  # noqa: E402

logger = logging.getLogger("viewstitch")


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def _grid(text: str) -> tuple[int, int]:
    try:
        w, h = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError("expected WIDTHxHEIGHT, e.g. 16x12") from None
    if w < 1 or h < 1:
        raise argparse.ArgumentTypeError("grid dimensions must be positive")
    return w, h


def _load_frames(rig, frames_dir: str) -> dict[str, np.ndarray]:
    from .fileio import read_image

    images = {}
    for c in rig.cameras:
        path = os.path.join(frames_dir, f"{c.name}.png")
        images[c.name] = read_image(path)
        if images[c.name].shape[:2] != (c.height, c.width):
            raise DataIOError(
                f"{path}: image is {images[c.name].shape[1]}x{images[c.name].shape[0]}, "
                f"camera {c.name} expects {c.width}x{c.height}"
            )
    return images


def cmd_synth(args) -> int:
    import dataclasses

    from .config import load_rig_config
    from .fileio import write_image, write_point_cloud, write_run_manifest
    from .synth import check_far_field, render_view, sample_view_points

    rig = load_rig_config(args.rig)
    env = dataclasses.replace(rig.environment, seed=args.seed)
    cams = rig.camera_models()
    try:
        check_far_field(env, cams)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    outputs = {}
    for c in cams:
        path = os.path.join(args.out, "images", f"{c.name}.png")
        write_image(path, render_view(env, c))
        outputs[f"image:{c.name}"] = path
    targets = [rig.target_model(t.name) for t in rig.targets]
    for t in targets:
        path = os.path.join(args.out, "gt", f"{t.name}.png")
        write_image(path, render_view(env, t))
        outputs[f"gt:{t.name}"] = path
    views = targets or cams
    n = args.points_per_view or max(v.width * v.height for v in views)
    cloud = sample_view_points(env, views, n, args.seed)
    cloud_path = os.path.join(args.out, "points.npy")
    write_point_cloud(cloud_path, cloud.xyz, cloud.rgb)
    outputs["cloud"] = cloud_path
    write_run_manifest(
        os.path.join(args.out, "synth_manifest.json"),
        "synth",
        args.argv,
        {"rig": args.rig},
        {"environment": env, "points_per_view": n},
        args.seed,
        outputs,
        {"points": len(cloud)},
    )
    print(f"synth: {len(cams)} views, {len(targets)} ground-truth poses, {len(cloud)} points -> {args.out}")
    return 0


def cmd_stitch(args) -> int:
    from .config import load_rig_config
    from .fileio import stable_json, atomic_write_text, write_image, write_run_manifest
    from .pipeline import FeatureStore, favs_synthesize

    rig = load_rig_config(args.rig)
    images = _load_frames(rig, args.frames)
    target = rig.target_model(args.target)
    cfg = rig.favs_config(seed=args.seed, geometric_only=args.geometric_only)
    store = FeatureStore(args.cache_dir)
    result = favs_synthesize(rig.camera_models(), images, target, cfg, store)
    img_path = os.path.join(args.out, f"{target.name}.png")
    hole_path = os.path.join(args.out, f"{target.name}_holes.png")
    write_image(img_path, result.image)
    write_image(hole_path, result.hole_mask)
    outputs = {"image": img_path, "holes": hole_path}
    per_source = result.per_source
    if not args.debug:
        per_source = [{k: v for k, v in s.items() if k != "clusters"} for s in per_source]
    else:
        dump = os.path.join(args.out, f"{target.name}_clusters.json")
        atomic_write_text(dump, stable_json({s["source_id"]: s["clusters"] for s in result.per_source}) + "\n")
        outputs["clusters"] = dump
    inputs = {"rig": args.rig, **{f"image:{c.name}": os.path.join(args.frames, f"{c.name}.png") for c in rig.cameras}}
    write_run_manifest(
        os.path.join(args.out, f"{target.name}_manifest.json"),
        "stitch",
        args.argv,
        inputs,
        cfg,
        args.seed,
        outputs,
        {
            "target": target.name,
            "coverage": result.coverage,
            "per_source": per_source,
            "weights": {
                "total_mean": float(result.total_weight.mean()),
                "total_max": float(result.total_weight.max()),
            },
        },
    )
    used = sum(1 for s in result.per_source if s["valid"])
    print(f"stitch: {target.name} from {used} sources, coverage {result.coverage:.3f} -> {img_path}")
    return 0


def cmd_datagen(args) -> int:
    import dataclasses

    from .config import load_rig_config
    from .datagen import FrameInput, build_training_records, manifest_header, write_manifest
    from .fileio import write_run_manifest
    from .pipeline import FeatureStore

    rig = load_rig_config(args.rig)
    images = _load_frames(rig, args.frames)
    sampling = dataclasses.replace(rig.sampling, seed=args.seed, k_per_side=args.k or rig.sampling.k_per_side)
    cfg = rig.favs_config(seed=args.seed)
    frame = FrameInput(rig.camera_models(), images, args.scene_id, args.frame_id)
    result = build_training_records(frame, sampling, args.out, cfg, FeatureStore(args.cache_dir))
    if not result.records:
        raise ViewStitchError("no training records could be generated")
    manifest = os.path.join(args.out, "manifest.jsonl")
    write_manifest(result.records, manifest, manifest_header(sampling, cfg))
    outputs = {"manifest": manifest}
    for i, r in enumerate(result.records):
        outputs[f"record{i}:left"] = os.path.join(args.out, r.left_pseudo_image_path)
        outputs[f"record{i}:right"] = os.path.join(args.out, r.right_pseudo_image_path)
    inputs = {"rig": args.rig, **{f"image:{c.name}": os.path.join(args.frames, f"{c.name}.png") for c in rig.cameras}}
    write_run_manifest(
        os.path.join(args.out, "datagen_manifest.json"),
        "datagen",
        args.argv,
        inputs,
        {"sampling": sampling, "favs": cfg},
        args.seed,
        outputs,
        {"records": len(result.records), "skipped": result.skipped},
    )
    print(f"datagen: {len(result.records)} records ({len(result.skipped)} skipped) -> {manifest}")
    return 0


def cmd_eval(args) -> int:
    from .config import load_rig_config
    from .errors import NoReferenceError
    from .evaluation import ColoredPointCloud, SsimProtocol, colorize_point_cloud, evaluate, project_sparse_reference
    from .fileio import atomic_write_text, read_image, read_point_cloud, stable_json, write_run_manifest

    rig = load_rig_config(args.rig)
    target = rig.target_model(args.target)
    image = read_image(args.image)
    xyz, rgb = read_point_cloud(args.cloud)
    if len(xyz) == 0:
        raise NoReferenceError(f"{args.cloud}: point cloud is empty")
    inputs = {"rig": args.rig, "image": args.image, "cloud": args.cloud}
    if rgb is None:
        if not args.frames:
            raise ConfigError("the point cloud has no colours; pass --frames to colorize it from the rig images")
        images = _load_frames(rig, args.frames)
        cams = rig.camera_models()
        cloud = colorize_point_cloud(xyz, cams, [images[c.name] for c in cams])
    else:
        cloud = ColoredPointCloud(xyz, rgb)
    ref = project_sparse_reference(cloud, target)
    protocol = SsimProtocol(min_coverage=args.min_coverage)
    metrics = evaluate(image, ref, protocol)
    report = {"target": target.name, "image": os.path.basename(args.image), "metrics": metrics.as_dict()}
    atomic_write_text(args.report, stable_json(report) + "\n")
    write_run_manifest(
        args.report + ".manifest.json",
        "eval",
        args.argv,
        inputs,
        {"ssim_protocol": protocol.as_dict()},
        None,
        {"report": args.report},
    )
    print(
        f"eval: psnr {metrics.psnr:.3f} dB, ssim {metrics.ssim:.4f}, mae {metrics.mae:.3f}, "
        f"rmse {metrics.rmse:.3f}, coverage {metrics.coverage:.3f} -> {args.report}"
    )
    return 0


def _cell_to_pixel(cam, gw: int, gh: int) -> np.ndarray:
    sx, sy = cam.width / gw, cam.height / gh
    return np.array([[sx, 0.0, (sx - 1) / 2], [0.0, sy, (sy - 1) / 2], [0.0, 0.0, 1.0]])


def cmd_attn_check(args) -> int:
    from .attention import (
        AttentionConfig,
        PEConfig,
        correspondence_grid,
        depth_level_masks,
        hierarchical_attention,
        positional_encoding,
        target_attention_map,
    )
    from .fileio import atomic_write_text, stable_json
    from .geometry import Homography, camera_homography
    from .losses import LossWeights, geo_consistency_loss, total_loss

    gw, gh = args.grid
    masks = None
    if args.homography:
        try:
            vals = [float(v) for v in args.homography.split(",")]
        except ValueError:
            raise ConfigError("--homography expects nine comma-separated numbers") from None
        if len(vals) != 9:
            raise ConfigError("--homography expects nine comma-separated numbers")
        h = Homography(np.array(vals).reshape(3, 3))
    else:
        if not (args.rig and args.source and args.target):
            raise ConfigError("pass --homography or all of --rig, --source and --target")
        from .config import load_rig_config

        rig = load_rig_config(args.rig)
        src = rig.target_model(args.source)
        dst = rig.target_model(args.target)
        full = camera_homography(src, dst).m
        # conjugate the pixel homography into grid-cell coordinates
        h = Homography(np.linalg.inv(_cell_to_pixel(dst, gw, gh)) @ full @ _cell_to_pixel(src, gw, gh))
        masks = depth_level_masks(src, dst, (gw, gh), radius=args.radius)
    tmap = target_attention_map(h, gw, gh, args.sigma)
    corr = correspondence_grid(h, gw, gh)
    rng = np.random.default_rng(args.seed)
    feats = rng.normal(size=(gh, gw, args.channels))
    cfg = AttentionConfig.uniform(masks or [None], args.sigma)
    att = hierarchical_attention(feats, feats, feats, cfg)
    pred = sum(w * lv.weights for w, lv in zip(cfg.layer_weights, att.levels))
    geo = geo_consistency_loss([pred], [tmap.matrix])
    pe = positional_encoding(np.zeros(2), PEConfig.seeded(seed=args.seed))
    rows = tmap.matrix.sum(axis=1)
    report = {
        "grid": [gw, gh],
        "homography": h.m,
        "kernel_sigma": args.sigma,
        "levels": cfg.levels,
        "target_map": {
            "row_sum_min": float(rows.min()),
            "row_sum_max": float(rows.max()),
            "uniform_rows": int(tmap.uniform_rows.sum()),
            "argmax": tmap.matrix.argmax(axis=1),
        },
        "correspondences_inside": int(corr.inside.sum()),
        "attention": {
            "empty_queries": int(att.empty.sum()),
            "row_sum_max_error": float(np.abs(pred.sum(axis=1)[~att.empty.reshape(-1)] - 1.0).max(initial=0.0)),
        },
        "losses": {
            "geo_consistency": geo,
            "total_with_unit_main": total_loss(1.0, geo, 0.0, LossWeights()),
        },
        "pe_at_zero": pe,
    }
    text = stable_json(report) + "\n"
    if args.out:
        atomic_write_text(args.out, text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_config(args) -> int:
    from .config import load_rig_config, serialize_rig_config

    sys.stdout.write(serialize_rig_config(load_rig_config(args.rig)))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="viewstitch", description="Target-view stitching for surround camera rigs.")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = p.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    s = sub.add_parser("synth", help="render a synthetic rig frame, ground-truth poses and a point cloud")
    s.add_argument("--rig", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--points-per-view", type=int, default=0, help="0 picks one point per pixel of each view")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("stitch", help="synthesise a target view from rig images")
    s.add_argument("--rig", required=True)
    s.add_argument("--frames", required=True, help="directory holding <camera>.png")
    s.add_argument("--target", required=True, help="target or camera name from the rig config")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--geometric-only", action="store_true")
    s.add_argument("--cache-dir", default=None, help="persist keypoint caches here")
    s.add_argument("--debug", action="store_true", help="also write the object cluster dump")
    s.set_defaults(func=cmd_stitch)

    s = sub.add_parser("datagen", help="emit self-supervised training records for one frame")
    s.add_argument("--rig", required=True)
    s.add_argument("--frames", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--k", type=_positive_int, default=None, help="pose pairs per camera")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--scene-id", default="scene")
    s.add_argument("--frame-id", type=int, default=0)
    s.add_argument("--cache-dir", default=None)
    s.set_defaults(func=cmd_datagen)

    s = sub.add_parser("eval", help="sparse metrics of an image against a point-cloud reference")
    s.add_argument("--image", required=True)
    s.add_argument("--cloud", required=True, help=".npy or .csv rows x,y,z[,r,g,b]")
    s.add_argument("--rig", required=True)
    s.add_argument("--target", required=True)
    s.add_argument("--report", required=True)
    s.add_argument("--frames", default=None, help="rig images used to colour an uncoloured cloud")
    s.add_argument("--min-coverage", type=float, default=0.5)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("attn-check", help="inspect geometry-guided attention maps and losses")
    s.add_argument("--homography", default=None, help="nine comma-separated entries, row major")
    s.add_argument("--rig", default=None)
    s.add_argument("--source", default=None)
    s.add_argument("--target", default=None)
    s.add_argument("--grid", type=_grid, default=(16, 12))
    s.add_argument("--sigma", type=float, default=2.0)
    s.add_argument("--radius", type=float, default=1.5)
    s.add_argument("--channels", type=_positive_int, default=8)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", default=None)
    s.set_defaults(func=cmd_attn_check)

    s = sub.add_parser("config", help="print a rig config with every default filled in")
    s.add_argument("--rig", required=True)
    s.set_defaults(func=cmd_config)
    return p


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    args.argv = argv
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s"
    )
    if _THREADS is not None and not (_THREADS.isdigit() and int(_THREADS) > 0):
        print(f"error: config_error: VIEWSTITCH_THREADS must be a positive integer, got {_THREADS!r}", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except ViewStitchError as exc:
        print(f"error: {exc.category}: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: domain_error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point.

Exit codes: 0 on success, 1 on a usage error, 2 on a runtime error.
"""

from __future__ import annotations

import argparse
import csv
import io as _stdio
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, io
from .camera import default_rig
from .depth_eval import DepthMap, Scope, compute_metrics, fuse_confidence, resize_for_eval
from .errors import ConfigError, StereoSimError
from .pipeline import generate_dataset, load_config, load_manifest, read_frame_meta
from .pose_eval import PoseInstance, SimilarityPose, aggregate_pose, fit_instance_pose
from .render import generate_pattern
from .stereo import MatcherConfig, simulate_depth

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2
METRIC_FIELDS = ("rmse", "rel", "mae", "delta_105", "delta_110", "delta_125", "n_pixels")
CHALLENGING_KINDS = ("specular", "transparent")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _env_int(name, default):
    v = os.environ.get(name)
    if v is None:
        return default
    try:
        return int(v)
    except ValueError:
        raise UsageError(f"{name} must be an integer, got {v!r}") from None


def _emit(text, out):
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------- generate


def cmd_generate(a):
    out = a.out or os.environ.get("STEREOSIM_OUT_DIR")
    if not out:
        raise UsageError("generate: --out is required (or set STEREOSIM_OUT_DIR)")
    workers = a.workers if a.workers is not None else _env_int("STEREOSIM_WORKERS", 1)
    if workers < 1:
        raise UsageError("generate: worker count must be >= 1")
    m = generate_dataset(a.config, a.seed, a.frames, out, workers)
    print(json.dumps({"out_dir": str(out), "n_frames": m.n_frames, "config_hash": m.config_hash}))


# ---------------------------------------------------------------- match


def _frame_dirs(dataset):
    m = load_manifest(dataset)
    return [Path(dataset) / Path(f.meta).parent for f in m.frames]


def _rig_and_matcher(meta_path, config_path, shape):
    if meta_path:
        meta = json.loads(Path(meta_path).read_text()) if not isinstance(meta_path, dict) else meta_path
        from .camera import StereoRig

        return StereoRig.from_dict(meta["sensor"]["rig"]), MatcherConfig(**meta["sensor"]["matcher"])
    if config_path:
        cfg = load_config(config_path)
        return cfg.rig, cfg.matcher
    return default_rig(shape[1], shape[0]), MatcherConfig()


def _match_frame(frame_dir, out_name):
    meta = read_frame_meta(frame_dir)
    left = io.load_image(frame_dir / "ir_left.png")
    right = io.load_image(frame_dir / "ir_right.png")
    rig, matcher = _rig_and_matcher(meta, None, left.shape)
    depth = simulate_depth(left, right, rig, matcher)
    depth = DepthMap(np.where(depth.values < io.MAX_STORED_DEPTH, depth.values, 0.0))
    io.write_atomic(frame_dir / f"{out_name}.png", io.encode_depth_png(depth))
    return float(depth.valid.mean())


def cmd_match(a):
    if a.dataset:
        if a.left or a.right or a.frame:
            raise UsageError("match: --dataset excludes --left/--right/--frame")
        fractions = [_match_frame(d, a.name) for d in _frame_dirs(a.dataset)]
        print(json.dumps({"frames": len(fractions), "valid_fraction": fractions}))
        return
    if a.frame:
        print(json.dumps({"valid_fraction": _match_frame(Path(a.frame), a.name)}))
        return
    if not (a.left and a.right and a.out):
        raise UsageError("match: need --left, --right and --out (or --frame / --dataset)")
    left, right = io.load_image(a.left), io.load_image(a.right)
    if left.ndim != 2 or right.ndim != 2:
        raise StereoSimError("IR images must be single-channel")
    rig, matcher = _rig_and_matcher(a.meta, a.config, left.shape)
    depth = simulate_depth(left, right, rig, matcher)
    depth = DepthMap(np.where(depth.values < io.MAX_STORED_DEPTH, depth.values, 0.0))
    io.write_atomic(a.out, io.encode_depth_png(depth))
    print(json.dumps({"valid_fraction": float(depth.valid.mean())}))


# ---------------------------------------------------------------- eval-depth


def _scope_masks(frame_dir, meta):
    mask = io.load_mask(frame_dir / "instance_mask.png")
    hard = [o["instance_id"] for o in meta["objects"] if o["material_kind"] in CHALLENGING_KINDS]
    return {Scope.ALL_OBJECTS.value: mask > 0, Scope.CHALLENGING.value: np.isin(mask, hard)}


def _metrics_rows(pairs, skip_invalid, resize):
    """pairs: list of (pred, gt, {scope: region}); pixels of all pairs are pooled per scope."""
    rows = {}
    scopes = list(pairs[0][2]) if pairs else []
    for scope in scopes:
        ps, gs, ms = [], [], []
        for pred, gt, regions in pairs:
            p, g, m = pred, gt, regions[scope]
            if resize:
                p, g, m = resize_for_eval(p), resize_for_eval(g), resize_for_eval(m)
            ps.append(p.ravel())
            gs.append(g.ravel())
            ms.append(m.ravel())
        rep = compute_metrics(np.concatenate(ps)[None], np.concatenate(gs)[None], np.concatenate(ms)[None],
                              skip_invalid=skip_invalid)
        rows[scope] = rep.to_dict()
    return rows


def _format_rows(rows, fmt):
    if fmt == "json":
        return io.dumps_json(rows)
    buf = _stdio.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("scope",) + METRIC_FIELDS)
    for scope, r in rows.items():
        w.writerow((scope,) + tuple("" if r[k] is None else r[k] for k in METRIC_FIELDS))
    return buf.getvalue()


def cmd_eval_depth(a):
    sources = sum(bool(x) for x in (a.pred or a.gt, a.frame, a.dataset))
    if sources != 1:
        raise UsageError("eval-depth: give exactly one of --pred/--gt, --frame or --dataset")
    if a.pred or a.gt:
        if not (a.pred and a.gt):
            raise UsageError("eval-depth: --pred and --gt go together")
        pred, gt = io.load_depth(a.pred).values, io.load_depth(a.gt).values
        region = io.load_mask(a.mask) > 0 if a.mask else np.ones(gt.shape, dtype=bool)
        pairs = [(pred, gt, {"mask": region})]
    else:
        dirs = [Path(a.frame)] if a.frame else _frame_dirs(a.dataset)
        pairs = []
        for d in dirs:
            meta = read_frame_meta(d)
            pred = io.load_depth(d / f"{a.pred_layer}.png").values
            gt = io.load_depth(d / "gt_depth.png").values
            pairs.append((pred, gt, _scope_masks(d, meta)))
    rows = _metrics_rows(pairs, a.skip_invalid, a.resize)
    if a.pred and len(rows) == 1:
        text = _format_rows(rows, a.format) if a.format == "csv" else io.dumps_json(rows["mask"])
    else:
        text = _format_rows(rows, a.format)
    _emit(text, a.out)
    if a.plot_dir:
        from .plotting import depth_figure, metrics_figure

        plot_dir = Path(a.plot_dir)
        for i, (pred, gt, regions) in enumerate(pairs):
            region = np.logical_or.reduce(list(regions.values()))
            depth_figure(pred, gt, region, plot_dir / f"depth_{i:06d}.png")
        metrics_figure(rows, plot_dir / "depth_metrics.png")


# ---------------------------------------------------------------- eval-pose


def _gt_instances(meta):
    out = {}
    for o in meta["objects"]:
        if o.get("visible", True):
            out[o["instance_id"]] = o
    return out


def _fit_frame(frame_dir, meta, depth_layer, a):
    from .camera import StereoRig

    k = StereoRig.from_dict(meta["sensor"]["rig"]).intrinsics
    nocs = io.load_nocs(frame_dir / "nocs_map.png")
    depth = io.load_depth(frame_dir / f"{depth_layer}.png").values
    mask = io.load_mask(frame_dir / "instance_mask.png")
    preds = {}
    for iid in _gt_instances(meta):
        try:
            pose, ext = fit_instance_pose(nocs, depth, mask, iid, k, a.threshold, a.iterations, a.seed)
        except StereoSimError:
            continue  # too few usable pixels: scored as a miss below
        preds[iid] = (pose, ext)
    return preds


def _instances_for(meta, preds):
    insts = []
    for iid, o in sorted(_gt_instances(meta).items()):
        gt = SimilarityPose.from_dict(o["nocs_pose"])
        if iid in preds:
            pose, ext = preds[iid]
        else:
            # missing prediction: an impossible pose far behind the camera
            pose, ext = SimilarityPose(gt.scale, np.eye(3), gt.translation + [0.0, 0.0, -1e3]), None
        insts.append(PoseInstance(pose, gt, o["category"], o["symmetry"], ext, o["extents"]))
    return insts


def _load_pred_json(path):
    d = json.loads(Path(path).read_text())
    preds = {}
    for e in d.get("instances", []):
        ext = e.get("extents")
        preds[int(e["instance_id"])] = (SimilarityPose.from_dict(e), None if ext is None else np.asarray(ext))
    return preds


def cmd_eval_pose(a):
    sources = sum(bool(x) for x in (a.meta, a.frame, a.dataset))
    if sources != 1:
        raise UsageError("eval-pose: give exactly one of --meta, --frame or --dataset")
    instances = []
    if a.meta:
        if not a.pred:
            raise UsageError("eval-pose: --meta needs --pred")
        meta = json.loads(Path(a.meta).read_text())
        instances = _instances_for(meta, _load_pred_json(a.pred))
    else:
        dirs = [Path(a.frame)] if a.frame else _frame_dirs(a.dataset)
        for d in dirs:
            meta = read_frame_meta(d)
            instances += _instances_for(meta, _fit_frame(d, meta, a.depth_layer, a))
    report = aggregate_pose(instances)
    if a.format == "json":
        text = io.dumps_json(report.to_dict())
    else:
        buf = _stdio.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        summary = {k: v for k, v in report.to_dict().items() if k not in ("per_category", "per_instance")}
        w.writerow(summary.keys())
        w.writerow(summary.values())
        text = buf.getvalue()
    _emit(text, a.out)
    if a.plot_dir:
        from .plotting import pose_figure

        pose_figure(report, Path(a.plot_dir) / "pose_report.png")


# ---------------------------------------------------------------- fuse / pattern


def cmd_fuse(a):
    if (a.conf is None) == (a.conf_value is None):
        raise UsageError("fuse: give exactly one of --conf or --conf-value")
    if a.conf_value is not None and not 0.0 <= a.conf_value <= 1.0:
        raise UsageError("fuse: --conf-value must lie in [0, 1]")
    raw, pred = io.load_depth(a.raw), io.load_depth(a.pred)
    if a.conf is not None:
        data = io.read_bytes(a.conf)
        try:
            conf = io.decode_image_png(data)
        except StereoSimError:
            conf = io.decode_mask_png(data) / 65535.0
    else:
        conf = np.full(raw.shape, a.conf_value)
    fused = fuse_confidence(raw, pred, conf)
    io.write_atomic(a.out, io.encode_depth_png(fused))


def cmd_pattern(a):
    pat = generate_pattern(a.seed, a.width, a.height, a.density, a.fov)
    io.write_atomic(a.out, io.encode_image_png(pat.bits.astype(np.float64)))
    print(json.dumps({"density": pat.density, "fov": pat.fov, "width": pat.width, "height": pat.height}))


# ---------------------------------------------------------------- parser


def build_parser():
    p = _Parser(prog="stereosim", description="Active-stereo depth sensor simulation and evaluation.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    g = sub.add_parser("generate", help="simulate a dataset")
    g.add_argument("--config", help="JSON config; defaults apply to missing sections")
    g.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
    g.add_argument("--frames", type=int, required=True, help="number of frames")
    g.add_argument("--out", help="output directory (env STEREOSIM_OUT_DIR)")
    g.add_argument("--workers", type=int, help="worker processes (env STEREOSIM_WORKERS, default 1)")
    g.set_defaults(func=cmd_generate)

    m = sub.add_parser("match", help="stereo-match stored IR pairs into depth")
    m.add_argument("--left", help="left IR PNG")
    m.add_argument("--right", help="right IR PNG")
    m.add_argument("--out", help="output depth PNG (with --left/--right)")
    m.add_argument("--meta", help="frame meta.json providing rig and matcher settings")
    m.add_argument("--config", help="config JSON providing rig and matcher settings")
    m.add_argument("--frame", help="frame directory; writes <name>.png inside it")
    m.add_argument("--dataset", help="dataset directory; matches every frame")
    m.add_argument("--name", default="match_depth", help="layer name for --frame/--dataset (default match_depth)")
    m.set_defaults(func=cmd_match)

    e = sub.add_parser("eval-depth", help="depth restoration metrics")
    e.add_argument("--pred", help="predicted depth PNG")
    e.add_argument("--gt", help="ground-truth depth PNG")
    e.add_argument("--mask", help="evaluation mask PNG (non-zero = evaluated); default whole image")
    e.add_argument("--frame", help="frame directory (rows: all_objects, challenging)")
    e.add_argument("--dataset", help="dataset directory; pixels pooled over frames")
    e.add_argument("--pred-layer", default="sim_depth", help="prediction layer for --frame/--dataset")
    e.add_argument("--skip-invalid", action="store_true", help="exclude invalid predictions instead of scoring them")
    e.add_argument("--resize", action="store_true", help="resample to 224x126 before evaluating")
    e.add_argument("--format", choices=("json", "csv"), default="json")
    e.add_argument("--out", help="write the report here instead of standard output")
    e.add_argument("--plot-dir", help="also write report figures into this directory")
    e.set_defaults(func=cmd_eval_depth)

    q = sub.add_parser("eval-pose", help="pose accuracy at IoU and degree/cm thresholds")
    q.add_argument("--meta", help="frame meta.json with ground-truth poses")
    q.add_argument("--pred", help="predicted poses JSON ({'instances': [...]}) for --meta")
    q.add_argument("--frame", help="frame directory; poses are fitted from nocs_map + depth")
    q.add_argument("--dataset", help="dataset directory; poses fitted for every frame")
    q.add_argument("--depth-layer", default="sim_depth", help="depth layer used for fitting")
    q.add_argument("--threshold", type=float, default=0.01, help="RANSAC inlier threshold in metres")
    q.add_argument("--iterations", type=int, default=200, help="RANSAC iterations")
    q.add_argument("--seed", type=int, default=0, help="RANSAC seed")
    q.add_argument("--format", choices=("json", "csv"), default="json")
    q.add_argument("--out", help="write the report here instead of standard output")
    q.add_argument("--plot-dir", help="also write report figures into this directory")
    q.set_defaults(func=cmd_eval_pose)

    f = sub.add_parser("fuse", help="confidence blend of raw and predicted depth")
    f.add_argument("--raw", required=True, help="raw sensor depth PNG")
    f.add_argument("--pred", required=True, help="predicted depth PNG")
    f.add_argument("--conf", help="confidence PNG (8-bit or 16-bit, full scale = 1)")
    f.add_argument("--conf-value", type=float, help="constant confidence in [0, 1]")
    f.add_argument("--out", required=True, help="output depth PNG")
    f.set_defaults(func=cmd_fuse)

    t = sub.add_parser("pattern", help="write a projector dot pattern PNG")
    t.add_argument("--seed", type=int, default=7)
    t.add_argument("--width", type=int, default=512)
    t.add_argument("--height", type=int, default=512)
    t.add_argument("--density", type=float, default=0.15, help="fraction of lit pixels")
    t.add_argument("--fov", type=float, default=90.0, help="horizontal field of view in degrees")
    t.add_argument("--out", required=True, help="output PNG")
    t.set_defaults(func=cmd_pattern)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "command", None):
            raise UsageError(parser.format_usage() + "stereosim: error: a command is required")
        args.func(args)
    except UsageError as exc:
        msg = str(exc)
        print(msg if "error:" in msg else f"stereosim: error: {msg}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return EXIT_OK if not exc.code else EXIT_USAGE
    except (StereoSimError, ConfigError, OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"stereosim: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

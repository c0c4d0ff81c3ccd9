"""Dataset generation: configuration, per-frame simulation and the on-disk layout.

Layout of a generated dataset::

    out_dir/manifest.json
    out_dir/frames/000000/{rgb,ir_left,ir_right,sim_depth,gt_depth,gt_normal,
                           instance_mask,nocs_map}.png
    out_dir/frames/000000/meta.json
"""

from __future__ import annotations

import copy
import hashlib
import json
import multiprocessing
import os
import shutil
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import io
from .camera import RigidPose, StereoRig, default_intrinsics
from .errors import ConfigError, StereoSimError
from .meshes import default_library, library_by_id, load_library
from .render import RenderSettings, generate_pattern, render_frame
from .scene import RandomizationConfig, sample_camera, sample_scene
from .stereo import MatcherConfig, simulate_depth

FORMAT_VERSION = 1
LAYERS = ("rgb", "ir_left", "ir_right", "sim_depth", "gt_depth", "gt_normal", "instance_mask", "nocs_map")
CONFIG_SECTIONS = ("image", "rig", "render", "pattern", "matcher", "randomization", "library", "mesh_dir")


def default_config_dict():
    return json.loads(resources.files("stereosim").joinpath("data/default_config.json").read_text())


def _merge(base, override):
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k != "randomization":
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


@dataclass(eq=False)
class SimConfig:
    """Everything needed to simulate frames, resolved from a JSON config."""

    raw: dict
    rig: StereoRig
    render: RenderSettings
    pattern_args: dict
    matcher: MatcherConfig
    randomization: RandomizationConfig
    library: list
    base_dir: str = "."

    @property
    def hash(self):
        return hashlib.sha256(json.dumps(self.raw, sort_keys=True).encode()).hexdigest()

    def pattern(self):
        return generate_pattern(**self.pattern_args)


def parse_config(d, base_dir="."):
    """Build a :class:`SimConfig` from a config dict; missing sections take their defaults."""
    if not isinstance(d, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(d) - set(CONFIG_SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config section(s): {', '.join(sorted(unknown))}")
    raw = _merge(default_config_dict(), d)
    try:
        img = raw["image"]
        k = default_intrinsics(int(img["width"]), int(img["height"]))
        rig_d = dict(raw["rig"])
        if "fx" in rig_d:
            fx = float(rig_d.pop("fx"))
            k = type(k)(fx, fx, k.cx, k.cy, k.width, k.height)
        color_offset = RigidPose.from_translation(rig_d.pop("color_offset", (0.0, 0.0, 0.0)))
        rig = StereoRig(k, left_pose=RigidPose(), color_offset=color_offset, **rig_d)
        render = RenderSettings(**raw["render"])
        pattern_args = dict(raw["pattern"])
        generate_pattern(**pattern_args)  # validate early
        matcher = MatcherConfig(**raw["matcher"])
        randomization = RandomizationConfig.from_dict(raw["randomization"])
    except ConfigError:
        raise
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(f"invalid config: {exc}") from exc
    if raw.get("library") is None and not raw.get("mesh_dir"):
        library = default_library()
    else:
        library = load_library(raw.get("library") or (), raw.get("mesh_dir"), base_dir)
    if not library:
        raise ConfigError("mesh library is empty")
    return SimConfig(raw, rig, render, pattern_args, matcher, randomization, library, str(base_dir))


def load_config(path=None):
    if path is None:
        return parse_config({})
    path = Path(path)
    try:
        d = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror or exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return parse_config(d, path.parent)


def frame_seed(master_seed, frame_index):
    """Per-frame seed: a hash of (master_seed, frame_index)."""
    ss = np.random.SeedSequence([int(master_seed) % 2**64, int(frame_index)])
    return int(ss.generate_state(1, np.uint64)[0])


def camera_frame_pose(obj, left_pose):
    """The object's NOCS similarity (centred NOCS -> camera frame) as a dict."""
    s, R, t = obj.nocs_pose()
    inv = left_pose.inverse()
    return {"scale": s, "rotation": (inv.rotation @ R).tolist(),
            "translation": (inv.rotation @ t + inv.translation).tolist()}


def simulate_frame(cfg, seed):
    """Sample, render and match one frame. Returns ``(FrameBundle, metadata dict)``."""
    scene = sample_scene(cfg.randomization, cfg.library, seed)
    rng = np.random.default_rng(np.random.SeedSequence([seed % 2**64, 1]))
    target = scene.centroid()
    target[2] = 0.0
    rig = cfg.rig.with_pose(sample_camera(cfg.randomization, rng, target))
    bundle = render_frame(scene, rig, cfg.pattern(), cfg.render, library=cfg.library, seed=seed)
    # match what is stored, so re-matching the PNGs reproduces sim_depth
    sim = simulate_depth(io.quantize(bundle.ir_left), io.quantize(bundle.ir_right), rig, cfg.matcher).values
    bundle.sim_depth = np.where(sim < io.MAX_STORED_DEPTH, sim, 0.0)
    bundle.gt_depth = np.where(bundle.gt_depth < io.MAX_STORED_DEPTH, bundle.gt_depth, 0.0)
    meshes = library_by_id(cfg.library)
    objects = []
    visible = set(np.unique(bundle.instance_mask).tolist())
    for o in scene.objects:
        objects.append({
            "instance_id": o.instance_id, "category": o.category_label, "mesh_id": o.mesh_id,
            "symmetry": o.symmetry, "material_kind": o.material.kind.value,
            "nocs_pose": camera_frame_pose(o, rig.left_pose),
            "extents": meshes[o.mesh_id].nocs_box_extents().tolist(),
            "visible": o.instance_id in visible,
        })
    meta = {
        "seed": seed,
        "scene": scene.to_dict(),
        "sensor": {"rig": rig.to_dict(), "pattern": cfg.pattern_args,
                   "render": {k: getattr(cfg.render, k) for k in cfg.render.__dataclass_fields__},
                   "matcher": cfg.matcher.to_dict()},
        "objects": objects,
    }
    return bundle, meta


def encode_bundle(bundle):
    """PNG bytes of every layer, keyed by layer name."""
    return {
        "rgb": io.encode_image_png(bundle.rgb),
        "ir_left": io.encode_image_png(bundle.ir_left),
        "ir_right": io.encode_image_png(bundle.ir_right),
        "sim_depth": io.encode_depth_png(bundle.sim_depth),
        "gt_depth": io.encode_depth_png(bundle.gt_depth),
        "gt_normal": io.encode_normal_png(bundle.gt_normal),
        "instance_mask": io.encode_mask_png(bundle.instance_mask),
        "nocs_map": io.encode_nocs_png(bundle.nocs_map),
    }


@dataclass
class FrameRecord:
    frame_index: int
    files: dict
    meta: str

    def to_dict(self):
        return {"frame_index": self.frame_index, "files": dict(self.files), "meta": self.meta}

    @classmethod
    def from_dict(cls, d):
        return cls(int(d["frame_index"]), dict(d["files"]), d["meta"])


@dataclass
class DatasetManifest:
    config_hash: str
    master_seed: int
    frames: list = field(default_factory=list)
    format_version: int = FORMAT_VERSION
    depth_unit_m: float = 1.0 / io.DEPTH_SCALE

    @property
    def n_frames(self):
        return len(self.frames)

    def to_dict(self):
        return {"format_version": self.format_version, "depth_unit_m": self.depth_unit_m,
                "config_hash": self.config_hash, "master_seed": self.master_seed,
                "n_frames": self.n_frames, "frames": [f.to_dict() for f in self.frames]}

    @classmethod
    def from_dict(cls, d):
        frames = [FrameRecord.from_dict(f) for f in d["frames"]]
        if [f.frame_index for f in frames] != list(range(len(frames))):
            raise ConfigError("manifest frame indices must be contiguous from 0")
        return cls(d["config_hash"], int(d["master_seed"]), frames, int(d["format_version"]),
                   float(d["depth_unit_m"]))


def load_manifest(out_dir):
    path = Path(out_dir) / "manifest.json"
    try:
        return DatasetManifest.from_dict(json.loads(path.read_text()))
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        raise ConfigError(f"{path}: unreadable manifest ({exc})") from exc


def frame_dirname(i):
    return f"frames/{i:06d}"


def _write_frame(out_dir, index, bundle, meta):
    """Write one frame into a temporary directory, then rename it into place."""
    out_dir = Path(out_dir)
    final = out_dir / frame_dirname(index)
    tmp = out_dir / "frames" / f".tmp-{index:06d}-{os.getpid()}"
    if tmp.exists():
        shutil.rmtree(tmp)
    tmp.mkdir(parents=True)
    files = {}
    for name, data in encode_bundle(bundle).items():
        (tmp / f"{name}.png").write_bytes(data)
        files[name] = f"{frame_dirname(index)}/{name}.png"
    meta = dict(meta, frame_index=index, files=files)
    (tmp / "meta.json").write_text(io.dumps_json(meta))
    if final.exists():
        shutil.rmtree(final)
    os.replace(tmp, final)
    return FrameRecord(index, files, f"{frame_dirname(index)}/meta.json")


def _frame_job(args):
    raw, base_dir, master_seed, index, out_dir, threads = args
    if threads:
        from .render import set_threads

        set_threads(threads)
    cfg = parse_config(raw, base_dir)
    bundle, meta = simulate_frame(cfg, frame_seed(master_seed, index))
    return _write_frame(out_dir, index, bundle, meta).to_dict()


def generate_dataset(config_path, master_seed, n_frames, out_dir, workers=1):
    """Simulate ``n_frames`` frames into ``out_dir`` and write the manifest.

    Output bytes depend only on (config, master_seed, n_frames); ``workers``
    changes wall time, never content.
    """
    if n_frames < 0:
        raise ConfigError("n_frames must be >= 0")
    if workers < 1:
        raise ConfigError("workers must be >= 1")
    cfg = load_config(config_path) if not isinstance(config_path, SimConfig) else config_path
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    jobs = [(cfg.raw, cfg.base_dir, master_seed, i, str(out_dir), 1 if workers > 1 else 0)
            for i in range(n_frames)]
    if workers == 1 or n_frames <= 1:
        records = [_frame_job(j) for j in jobs]
    else:
        ctx = multiprocessing.get_context("spawn")
        with ProcessPoolExecutor(max_workers=min(workers, n_frames), mp_context=ctx) as pool:
            records = list(pool.map(_frame_job, jobs))
    manifest = DatasetManifest(cfg.hash, int(master_seed), [FrameRecord.from_dict(r) for r in records])
    io.write_atomic(out_dir / "manifest.json", io.dumps_json(manifest.to_dict()))
    return manifest


def read_frame_meta(frame_dir):
    path = Path(frame_dir) / "meta.json"
    try:
        return json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise StereoSimError(f"{path}: unreadable frame metadata ({exc})") from exc

"""Small hand-built scenes shared by the tests."""

import numpy as np

from stereosim import io
from stereosim.camera import RigidPose, default_rig, look_at
from stereosim.meshes import sphere
from stereosim.render import generate_pattern, render_gt, render_ir_pair
from stereosim.scene import EnvLight, Floor, Material, SceneDescription, SceneObject
from stereosim.stereo import MatcherConfig, simulate_depth

WHITE = Material("diffuse", (1.0, 1.0, 1.0), roughness=1.0, specular_weight=0.0)
DIFFUSE = Material("diffuse", (0.8, 0.8, 0.8), roughness=0.8, specular_weight=0.2)
MIRROR = Material("specular", (0.95, 0.95, 0.95), roughness=0.0, metallic=1.0, specular_weight=1.0)
GLASS = Material("transparent", (1.0, 1.0, 1.0), roughness=0.0, specular_weight=0.5, ior=1.45, transmission=1.0)


def plane_scene(material=WHITE):
    """Nothing but the floor."""
    return SceneDescription((), EnvLight((1.0, 1.0, 1.0), 1.0), Floor(material), 0)


def sphere_scene(material, radius=0.08):
    """One sphere resting at the origin on a diffuse floor."""
    mesh = sphere(radius, mesh_id="ball", category="ball")
    obj = SceneObject("ball", RigidPose.from_translation((0.0, 0.0, radius)), 1.0, material, "ball", 1,
                      tuple(mesh.nocs_center), mesh.nocs_extent)
    return SceneDescription((obj,), EnvLight((1.0, 1.0, 1.0), 1.0), Floor(DIFFUSE), 0), [mesh]


def render_and_match(scene, library, eye, target=(0.0, 0.0, 0.0), width=320, height=180, spp=32, seed=1,
                     matcher=None):
    """Render the IR pair and GT from ``eye``; returns (sim_depth, gt_depth, instance_mask, rig)."""
    rig = default_rig(width, height, look_at(eye, target, up=(0.0, 1.0, 0.0)))
    pat = generate_pattern(7)
    left, right = render_ir_pair(scene, rig, pat, spp, 4, library=library, seed=seed)
    sim = simulate_depth(io.quantize(left), io.quantize(right), rig, matcher or MatcherConfig())
    gt, _, mask, _ = render_gt(scene, rig.intrinsics, rig.left_pose, library=library)
    return sim.values, gt, mask, rig


def matchable_region(gt, rig, cfg=None):
    """Pixels where a full block and the true disparity fit inside both images."""
    cfg = cfg or MatcherConfig()
    h, w = gt.shape
    r = cfg.block_radius
    disp = np.where(gt > 0, rig.intrinsics.fx * rig.baseline / np.where(gt > 0, gt, 1.0), np.inf)
    xs = np.arange(w)[None, :]
    ys = np.arange(h)[:, None]
    return (ys >= r) & (ys < h - r) & (xs < w - r) & (xs - np.ceil(disp) >= r) & (gt > 0)

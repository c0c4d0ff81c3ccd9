"""Rendering of the IR stereo pair, the colour image and ground-truth layers.

The path tracer lives in ``_kernels``; this module flattens a
:class:`~stereosim.scene.SceneDescription` into arrays, builds the BVH and
wraps the kernels with the rig/projector geometry.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .errors import BadDensity
from .meshes import library_by_id

LUMINANCE = np.array([0.2126, 0.7152, 0.0722])

#: Projector radiant intensity at which a white Lambertian plane 1 m away, facing
#: the projector, reads 0.5 under a fully lit pattern pixel.
DEFAULT_PROJECTOR_POWER = 0.5 * math.pi

BVH_LEAF_SIZE = 4


@dataclass(frozen=True, eq=False)
class PatternImage:
    bits: np.ndarray
    fov: float = 90.0

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=np.uint8)
        if bits.ndim != 2 or not np.isin(bits, (0, 1)).all():
            raise ValueError("pattern must be a 2-D binary grid")
        lit = int(bits.sum())
        if lit == 0 or lit == bits.size:
            raise BadDensity("pattern needs at least one lit and one unlit pixel")
        if not 0.05 <= lit / bits.size <= 0.30:
            raise BadDensity(f"dot density {lit / bits.size:.3f} outside [0.05, 0.30]")
        if not 0 < self.fov < 180:
            raise ValueError("projector fov must lie in (0, 180) degrees")
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)

    @property
    def width(self):
        return self.bits.shape[1]

    @property
    def height(self):
        return self.bits.shape[0]

    @property
    def density(self):
        return float(self.bits.mean())

    def projector_intrinsics(self):
        """(fx, fy, cx, cy) of the projector pinhole; ``fov`` spans the pattern width."""
        f = (self.width / 2.0) / math.tan(math.radians(self.fov) / 2.0)
        return np.array([f, f, (self.width - 1) / 2.0, (self.height - 1) / 2.0])


def generate_pattern(seed, width=512, height=512, density=0.15, fov=90.0):
    """Random binary dot pattern with exactly ``round(density * width * height)`` lit pixels."""
    if not 0.0 < density < 1.0:
        raise BadDensity("density must lie in (0, 1)")
    n = width * height
    rng = np.random.default_rng(np.random.SeedSequence(int(seed) % 2**64))
    lit = rng.choice(n, size=int(round(density * n)), replace=False)
    bits = np.zeros(n, dtype=np.uint8)
    bits[lit] = 1
    return PatternImage(bits.reshape(height, width), fov)


@dataclass(frozen=True)
class RenderSettings:
    spp_ir: int = 64
    spp_rgb: int = 128
    max_bounces: int = 4
    ir_ambient_factor: float = 0.1
    projector_power: float = DEFAULT_PROJECTOR_POWER

    def __post_init__(self):
        if self.spp_ir < 1 or self.spp_rgb < 1 or self.max_bounces < 1:
            raise ValueError("spp and max_bounces must be >= 1")


@dataclass(eq=False)
class FrameBundle:
    rgb: np.ndarray
    ir_left: np.ndarray
    ir_right: np.ndarray
    gt_depth: np.ndarray
    gt_normal: np.ndarray
    instance_mask: np.ndarray
    nocs_map: np.ndarray
    sim_depth: np.ndarray | None = None
    extras: dict = field(default_factory=dict)


@dataclass(eq=False)
class PackedScene:
    """Flat arrays consumed by the kernels. Slot 0 is the floor, slot i the (i-1)-th object."""

    has_floor: bool
    mats: np.ndarray
    inst: np.ndarray
    nocs_affine: np.ndarray
    spheres: np.ndarray
    sphere_slot: np.ndarray
    tri_v0: np.ndarray
    tri_e1: np.ndarray
    tri_e2: np.ndarray
    tri_n: np.ndarray
    tri_slot: np.ndarray
    bvh: tuple
    env: np.ndarray

    def geometry_args(self):
        return (self.spheres, self.sphere_slot, self.tri_v0, self.tri_e1, self.tri_e2, self.tri_n,
                self.tri_slot) + self.bvh


def _material_row(m, checker):
    return [*m.base_color, m.roughness, m.metallic, m.specular_weight, m.ior, m.transmission, checker]


def build_bvh(lo, hi):
    """Median-split BVH over primitive bounding boxes.

    Returns (node_lo, node_hi, left, right, start, count, order); leaves have count > 0.
    """
    n = len(lo)
    if n == 0:
        z3 = np.zeros((0, 3))
        zi = np.zeros(0, dtype=np.int64)
        return z3, z3.copy(), zi, zi.copy(), zi.copy(), zi.copy(), zi.copy()
    centroids = (lo + hi) / 2.0
    order = np.arange(n, dtype=np.int64)
    nodes_lo, nodes_hi, left, right, start, count = [], [], [], [], [], []

    def new_node():
        for lst in (nodes_lo, nodes_hi):
            lst.append(np.zeros(3))
        for lst in (left, right, start, count):
            lst.append(0)
        return len(left) - 1

    todo = [(new_node(), 0, n)]
    while todo:
        node, s, e = todo.pop()
        idx = order[s:e]
        nodes_lo[node] = lo[idx].min(axis=0)
        nodes_hi[node] = hi[idx].max(axis=0)
        if e - s <= BVH_LEAF_SIZE:
            start[node], count[node] = s, e - s
            continue
        c = centroids[idx]
        axis = int(np.argmax(c.max(axis=0) - c.min(axis=0)))
        mid = (e - s) // 2
        part = np.argsort(c[:, axis], kind="stable")
        order[s:e] = idx[part]
        a, b = new_node(), new_node()
        left[node], right[node] = a, b
        todo.append((a, s, s + mid))
        todo.append((b, s + mid, e))
    return (np.array(nodes_lo), np.array(nodes_hi), np.array(left, dtype=np.int64),
            np.array(right, dtype=np.int64), np.array(start, dtype=np.int64),
            np.array(count, dtype=np.int64), order)


def pack_scene(scene, library):
    """Flatten ``scene`` (with geometry looked up in ``library``) for the kernels."""
    meshes = library_by_id(library) if not isinstance(library, dict) else library
    n = len(scene.objects)
    mats = np.zeros((n + 1, K.MAT_COLS))
    inst = np.zeros(n + 1, dtype=np.int64)
    affine = np.zeros((n + 1, 3, 4))
    if scene.floor is not None:
        mats[0] = _material_row(scene.floor.material, scene.floor.texture_checker)
    spheres, sphere_slot = [], []
    v0s, e1s, e2s, slots = [], [], [], []
    for i, obj in enumerate(scene.objects, start=1):
        mesh = meshes[obj.mesh_id]
        mats[i] = _material_row(obj.material, obj.texture_checker)
        inst[i] = obj.instance_id
        R, t = obj.pose.rotation, obj.pose.translation
        k = 1.0 / (obj.scale * obj.nocs_extent)
        affine[i, :, :3] = R.T * k
        affine[i, :, 3] = -(R.T @ t) * k - np.asarray(obj.nocs_center) / obj.nocs_extent + 0.5
        if mesh.kind == "sphere":
            spheres.append([*t, mesh.radius * obj.scale])
            sphere_slot.append(i)
        else:
            v = (obj.scale * mesh.vertices) @ R.T + t
            f = mesh.faces
            v0s.append(v[f[:, 0]])
            e1s.append(v[f[:, 1]] - v[f[:, 0]])
            e2s.append(v[f[:, 2]] - v[f[:, 0]])
            slots.append(np.full(len(f), i, dtype=np.int64))
    if v0s:
        v0, e1, e2 = np.vstack(v0s), np.vstack(e1s), np.vstack(e2s)
        tri_slot = np.concatenate(slots)
        nrm = np.cross(e1, e2)
        nrm /= np.maximum(np.linalg.norm(nrm, axis=1, keepdims=True), 1e-300)
        corners = np.stack([v0, v0 + e1, v0 + e2])
        bvh = build_bvh(corners.min(axis=0), corners.max(axis=0))
    else:
        v0 = e1 = e2 = nrm = np.zeros((0, 3))
        tri_slot = np.zeros(0, dtype=np.int64)
        bvh = build_bvh(np.zeros((0, 3)), np.zeros((0, 3)))
    return PackedScene(
        has_floor=scene.floor is not None, mats=mats, inst=inst, nocs_affine=affine,
        spheres=np.array(spheres, dtype=np.float64).reshape(-1, 4),
        sphere_slot=np.array(sphere_slot, dtype=np.int64), tri_v0=v0, tri_e1=e1, tri_e2=e2, tri_n=nrm,
        tri_slot=tri_slot, bvh=bvh, env=np.asarray(scene.env_light.radiance, dtype=np.float64),
    )


def _packed(scene, library):
    if isinstance(scene, PackedScene):
        return scene
    if library is None:
        raise ValueError("a mesh library is required to render a SceneDescription")
    return pack_scene(scene, library)


def _intr(k):
    return np.array([k.fx, k.fy, k.cx, k.cy], dtype=np.float64)


def _derived_seed(seed, stream):
    return int(np.random.SeedSequence([int(seed) % 2**64, stream]).generate_state(1, np.uint64)[0])


def _trace(ps, k, pose, spp, max_bounces, seed, env, projector=None):
    if projector is None:
        proj_on, proj_R, proj_t = False, np.eye(3), np.zeros(3)
        pattern, PK, power = np.zeros((1, 1)), np.ones(4), 0.0
    else:
        proj_pose, pat, power = projector
        proj_on, proj_R, proj_t = True, proj_pose.rotation, proj_pose.translation
        pattern, PK = pat.bits.astype(np.float64), pat.projector_intrinsics()
    return K.trace_image(
        k.width, k.height, _intr(k), np.ascontiguousarray(pose.rotation), np.ascontiguousarray(pose.translation),
        int(spp), int(max_bounces), np.uint64(seed), np.asarray(env, dtype=np.float64),
        proj_on, np.ascontiguousarray(proj_R), np.ascontiguousarray(proj_t), pattern, PK, float(power),
        ps.has_floor, ps.mats, ps.nocs_affine, *ps.geometry_args(),
    )


def to_intensity(radiance):
    """Luminance of an H x W x 3 radiance image, clamped to [0, 1]."""
    return np.clip(radiance @ LUMINANCE, 0.0, 1.0)


def render_ir_pair(scene, rig, pattern, spp=64, max_bounces=4, *, library=None, seed=0,
                   ir_ambient_factor=0.1, projector_power=DEFAULT_PROJECTOR_POWER, projector_on=True):
    """Render the left and right IR images, each H x W in [0, 1]."""
    ps = _packed(scene, library)
    env = ps.env * ir_ambient_factor
    projector = (rig.projector_pose, pattern, projector_power) if projector_on else None
    out = []
    for stream, pose in ((1, rig.left_pose), (2, rig.right_pose)):
        rad = _trace(ps, rig.intrinsics, pose, spp, max_bounces, _derived_seed(seed, stream), env, projector)
        out.append(to_intensity(rad))
    return out[0], out[1]


def render_rgb(scene, intrinsics, pose, spp=128, max_bounces=4, *, library=None, seed=0):
    """Colour image under environment light only, H x W x 3 clamped to [0, 1]."""
    ps = _packed(scene, library)
    rad = _trace(ps, intrinsics, pose, spp, max_bounces, _derived_seed(seed, 3), ps.env)
    return np.clip(rad, 0.0, 1.0)


def render_gt(scene, intrinsics, pose, *, library=None):
    """Ground-truth layers from one pixel-centre ray per pixel.

    Returns ``(depth, normal, instance_mask, nocs)``; depth is camera-frame z
    (0 where the ray escapes), normals face the camera.
    """
    ps = _packed(scene, library)
    depth, normal, mask, nocs = K.cast_gt(
        intrinsics.width, intrinsics.height, _intr(intrinsics), np.ascontiguousarray(pose.rotation),
        np.ascontiguousarray(pose.translation), ps.has_floor, ps.inst, ps.nocs_affine, *ps.geometry_args(),
    )
    return depth, normal, mask, nocs


def render_frame(scene, rig, pattern, settings=None, *, library, seed=0):
    """All rendered layers of one frame (no simulated depth yet)."""
    settings = settings or RenderSettings()
    ps = _packed(scene, library)
    ir_l, ir_r = render_ir_pair(ps, rig, pattern, settings.spp_ir, settings.max_bounces, seed=seed,
                                ir_ambient_factor=settings.ir_ambient_factor,
                                projector_power=settings.projector_power)
    rgb = render_rgb(ps, rig.intrinsics, rig.color_pose, settings.spp_rgb, settings.max_bounces, seed=seed)
    depth, normal, mask, nocs = render_gt(ps, rig.intrinsics, rig.left_pose)
    return FrameBundle(rgb=rgb, ir_left=ir_l, ir_right=ir_r, gt_depth=depth, gt_normal=normal,
                       instance_mask=mask, nocs_map=nocs)


def set_threads(n):
    """Number of threads the kernels may use; results do not depend on it."""
    import numba

    numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))

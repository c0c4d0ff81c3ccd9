"""Scene description types and the domain-randomization sampler."""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field, replace
from importlib import resources

import numpy as np

from .camera import RigidPose, look_at, transform_point
from .errors import ConfigError, EmptyPalette, PlacementOverflow

PLACEMENT_ATTEMPTS = 1000
OVERLAP_TOLERANCE = 0.1

# legal parameter ranges shared by every material kind
_RANGES = {
    "roughness": (0.0, 1.0),
    "metallic": (0.0, 1.0),
    "specular_weight": (0.0, 1.0),
    "ior": (1.0 + 1e-6, 3.0),
    "transmission": (0.0, 1.0),
}
_SCALARS = tuple(_RANGES)


class MaterialKind(str, enum.Enum):
    DIFFUSE = "diffuse"
    SPECULAR = "specular"
    TRANSPARENT = "transparent"


@dataclass(frozen=True)
class Material:
    kind: MaterialKind
    base_color: tuple = (0.8, 0.8, 0.8)
    roughness: float = 0.5
    metallic: float = 0.0
    specular_weight: float = 0.5
    ior: float = 1.5
    transmission: float = 0.0
    texture_mix_ratio: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", MaterialKind(self.kind))
        object.__setattr__(self, "base_color", tuple(float(c) for c in self.base_color))
        problems = self.violations()
        if problems:
            raise ValueError("invalid material: " + "; ".join(problems))

    def violations(self):
        out = []
        if len(self.base_color) != 3 or not all(0.0 <= c <= 1.0 for c in self.base_color):
            out.append("base_color outside [0,1]^3")
        for name, (lo, hi) in _RANGES.items():
            v = getattr(self, name)
            if not lo <= v <= hi:
                out.append(f"{name}={v} outside [{lo}, {hi}]")
        if not 0.0 <= self.texture_mix_ratio <= 1.0:
            out.append("texture_mix_ratio outside [0,1]")
        if self.kind is MaterialKind.TRANSPARENT and not (self.transmission > 0 and self.ior > 1):
            out.append("transparent material needs transmission > 0 and ior > 1")
        if self.kind is MaterialKind.DIFFUSE and not (self.transmission == 0 and self.metallic <= 0.2):
            out.append("diffuse material needs transmission = 0 and metallic <= 0.2")
        return out

    def to_dict(self):
        return {"kind": self.kind.value, "base_color": list(self.base_color), "roughness": self.roughness,
                "metallic": self.metallic, "specular_weight": self.specular_weight, "ior": self.ior,
                "transmission": self.transmission, "texture_mix_ratio": self.texture_mix_ratio}

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass(frozen=True)
class MaterialTemplate:
    """A palette entry: nominal material plus symmetric jitter half-widths per parameter."""

    name: str
    material: Material
    jitter: dict = field(default_factory=dict)

    def interval(self, param, channel=None):
        m = self.material
        if param == "base_color":
            v, (lo, hi) = m.base_color[channel], (0.0, 1.0)
        else:
            v, (lo, hi) = getattr(m, param), _RANGES[param]
            if m.kind is MaterialKind.DIFFUSE and param == "metallic":
                hi = 0.2
            if m.kind is MaterialKind.TRANSPARENT and param == "transmission":
                lo = max(lo, 1e-3)
        w = float(self.jitter.get(param, 0.0))
        return max(lo, v - w), min(hi, v + w)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        name = d.pop("name")
        jitter = d.pop("jitter", {})
        unknown = set(jitter) - set(_SCALARS) - {"base_color"}
        if unknown:
            raise ConfigError(f"template {name}: unknown jitter keys {sorted(unknown)}")
        try:
            return cls(name, Material(**d), dict(jitter))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"template {name}: {exc}") from exc

    def to_dict(self):
        d = self.material.to_dict()
        d.pop("texture_mix_ratio")
        return {"name": self.name, **d, "jitter": dict(self.jitter)}


@dataclass(frozen=True, eq=False)
class SceneObject:
    mesh_id: str
    pose: RigidPose
    scale: float
    material: Material
    category_label: str
    instance_id: int
    nocs_center: tuple
    nocs_extent: float
    symmetry: str = "none"
    # checker cells per NOCS unit on the albedo; 0 disables
    texture_checker: float = 0.0

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError("scale must be positive")
        if not self.instance_id > 0:
            raise ValueError("instance ids are positive integers")
        object.__setattr__(self, "nocs_center", tuple(float(c) for c in self.nocs_center))

    def __eq__(self, other):
        return isinstance(other, SceneObject) and self.to_dict() == other.to_dict()

    @property
    def bounding_center(self):
        return transform_point(self.scale * np.asarray(self.nocs_center), self.pose)

    @property
    def bounding_radius(self):
        return self.scale * self.nocs_extent / 2.0

    def world_to_nocs(self, points):
        local = (np.asarray(points, dtype=np.float64) - self.pose.translation) @ self.pose.rotation / self.scale
        return (local - np.asarray(self.nocs_center)) / self.nocs_extent + 0.5

    def nocs_pose(self):
        """Similarity (scale, R, t) taking centred NOCS coordinates ``nocs - 0.5`` to world."""
        s = self.scale * self.nocs_extent
        t = transform_point(self.scale * np.asarray(self.nocs_center), self.pose)
        return s, self.pose.rotation.copy(), t

    def to_dict(self):
        return {"mesh_id": self.mesh_id, "pose": self.pose.to_dict(), "scale": self.scale,
                "material": self.material.to_dict(), "category_label": self.category_label,
                "instance_id": self.instance_id, "nocs_center": list(self.nocs_center),
                "nocs_extent": self.nocs_extent, "symmetry": self.symmetry,
                "texture_checker": self.texture_checker}

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["pose"] = RigidPose.from_dict(d["pose"])
        d["material"] = Material.from_dict(d["material"])
        return cls(**d)


@dataclass(frozen=True)
class EnvLight:
    color: tuple = (1.0, 1.0, 1.0)
    intensity: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "color", tuple(float(c) for c in self.color))
        if self.intensity < 0:
            raise ValueError("environment intensity must be >= 0")

    @property
    def radiance(self):
        return tuple(c * self.intensity for c in self.color)


@dataclass(frozen=True)
class Floor:
    """Ground plane z = 0."""

    material: Material
    # checker cells per metre; 0 disables
    texture_checker: float = 0.0


@dataclass(frozen=True, eq=False)
class SceneDescription:
    objects: tuple
    env_light: EnvLight
    floor: Floor | None
    rng_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "objects", tuple(self.objects))

    def __eq__(self, other):
        return isinstance(other, SceneDescription) and self.to_dict() == other.to_dict()

    def overlap_violations(self, tolerance=OVERLAP_TOLERANCE):
        """Pairs of instance ids whose bounding spheres interpenetrate beyond ``tolerance``."""
        bad = []
        objs = self.objects
        for i in range(len(objs)):
            for j in range(i + 1, len(objs)):
                if _interpenetration(objs[i], objs[j]) > tolerance * min(objs[i].bounding_radius,
                                                                          objs[j].bounding_radius):
                    bad.append((objs[i].instance_id, objs[j].instance_id))
        return bad

    def centroid(self):
        if not self.objects:
            return np.zeros(3)
        return np.mean([o.bounding_center for o in self.objects], axis=0)

    def to_dict(self):
        return {
            "objects": [o.to_dict() for o in self.objects],
            "env_light": {"color": list(self.env_light.color), "intensity": self.env_light.intensity},
            "floor": None if self.floor is None else {"material": self.floor.material.to_dict(),
                                                      "texture_checker": self.floor.texture_checker},
            "rng_seed": self.rng_seed,
        }

    @classmethod
    def from_dict(cls, d):
        floor = d.get("floor")
        return cls(
            tuple(SceneObject.from_dict(o) for o in d["objects"]),
            EnvLight(tuple(d["env_light"]["color"]), d["env_light"]["intensity"]),
            None if floor is None else Floor(Material.from_dict(floor["material"]), floor["texture_checker"]),
            int(d["rng_seed"]),
        )


def _interpenetration(a, b):
    dist = np.linalg.norm(a.bounding_center - b.bounding_center)
    return a.bounding_radius + b.bounding_radius - dist


def _interval(v, name):
    lo, hi = (float(x) for x in v)
    if not lo <= hi:
        raise ConfigError(f"{name}: empty interval [{lo}, {hi}]")
    return lo, hi


@dataclass(frozen=True)
class RandomizationConfig:
    object_count_range: tuple = (6, 10)
    scale_range: tuple = (0.8, 1.2)
    material_palette: dict = field(default_factory=dict)
    # probabilities for (specular, transparent, diffuse)
    material_kind_weights: tuple = (0.4, 0.3, 0.3)
    texture_mix_range: tuple = (0.0, 1.0)
    env_intensity_range: tuple = (0.5, 1.5)
    env_color_range: tuple = (0.85, 1.0)
    camera_distance_range: tuple = (0.55, 0.8)
    camera_elevation_range: tuple = (45.0, 80.0)  # degrees
    camera_azimuth_range: tuple = (0.0, 360.0)  # degrees
    floor_materials: tuple = ()
    floor_checker_range: tuple = (0.0, 0.0)  # cells per metre
    object_checker_range: tuple = (0.0, 0.0)  # cells per NOCS unit, diffuse objects only
    placement_half_extent: float = 0.3
    face_down_probability: float = 0.25

    def __post_init__(self):
        for name in ("object_count_range", "scale_range", "texture_mix_range", "env_intensity_range",
                     "env_color_range", "camera_distance_range", "camera_elevation_range",
                     "camera_azimuth_range", "floor_checker_range", "object_checker_range"):
            object.__setattr__(self, name, _interval(getattr(self, name), name))
        lo, hi = self.object_count_range
        object.__setattr__(self, "object_count_range", (int(lo), int(hi)))
        if self.object_count_range[0] < 0 or self.scale_range[0] <= 0:
            raise ConfigError("object counts must be >= 0 and scales > 0")
        w = tuple(float(x) for x in self.material_kind_weights)
        if len(w) != 3 or min(w) < 0 or abs(sum(w) - 1.0) > 1e-9:
            raise ConfigError("material_kind_weights must be 3 non-negative numbers summing to 1")
        object.__setattr__(self, "material_kind_weights", w)
        palette = {MaterialKind(k): tuple(v) for k, v in self.material_palette.items()}
        for kind, templates in palette.items():
            for t in templates:
                if t.material.kind is not kind:
                    raise ConfigError(f"template {t.name} listed under {kind.value} but is {t.material.kind.value}")
        object.__setattr__(self, "material_palette", palette)
        object.__setattr__(self, "floor_materials", tuple(self.floor_materials))

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        palette = d.pop("material_palette", None)
        if palette is None:
            palette = load_default_palette_dict()
        d["material_palette"] = {k: [MaterialTemplate.from_dict(t) for t in v] for k, v in palette.items()}
        floors = d.pop("floor_materials", None)
        if floors is None:
            floors = load_default_palette_dict()["diffuse"]
        d["floor_materials"] = [MaterialTemplate.from_dict(t) for t in floors]
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(f"randomization config: {exc}") from exc

    def to_dict(self):
        out = {}
        for name in self.__dataclass_fields__:
            v = getattr(self, name)
            if name == "material_palette":
                v = {k.value: [t.to_dict() for t in ts] for k, ts in v.items()}
            elif name == "floor_materials":
                v = [t.to_dict() for t in v]
            elif isinstance(v, tuple):
                v = list(v)
            out[name] = v
        return out


def load_default_palette_dict():
    text = resources.files("stereosim").joinpath("data/materials.json").read_text()
    return json.loads(text)


def default_randomization():
    return RandomizationConfig.from_dict({})


def sample_material(config, kind, rng):
    """Draw one material of ``kind``: a random palette template with every parameter jittered."""
    kind = MaterialKind(kind)
    templates = config.material_palette.get(kind, ())
    if not templates:
        raise EmptyPalette(f"no {kind.value} templates in the palette")
    return jitter_template(templates[int(rng.integers(len(templates)))], rng)


def jitter_template(template, rng):
    color = tuple(float(rng.uniform(*template.interval("base_color", c))) for c in range(3))
    values = {name: float(rng.uniform(*template.interval(name))) for name in _SCALARS}
    if template.material.kind is not MaterialKind.TRANSPARENT:
        values["transmission"] = template.material.transmission
    return replace(template.material, base_color=color, **values)


def assign_material(obj, material, mix, texture_color=None):
    """Give ``obj`` the BSDF of ``material`` with its colour blended toward the object's own texture.

    ``texture_color`` defaults to the object's current base colour.
    """
    if not 0.0 <= mix <= 1.0:
        raise ValueError("mix must lie in [0, 1]")
    tex = np.asarray(texture_color if texture_color is not None else obj.material.base_color, dtype=np.float64)
    color = mix * tex + (1.0 - mix) * np.asarray(material.base_color)
    color = tuple(float(c) for c in np.clip(color, 0.0, 1.0))
    return replace(obj, material=replace(material, base_color=color, texture_mix_ratio=float(mix)))


def _resting_rotation(yaw, face_down):
    c, s = math.cos(yaw), math.sin(yaw)
    R = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    if face_down:
        R = R * np.array([1.0, -1.0, -1.0])  # then a half turn about x
    return R


def _resting_translation(mesh, scale, R, xy):
    if mesh.kind == "sphere":
        lowest = -mesh.radius * scale
    else:
        lowest = float(((scale * mesh.vertices) @ R.T)[:, 2].min())
    return np.array([xy[0], xy[1], -lowest])


def resting_pose(mesh, scale, yaw, face_down, xy):
    """Pose putting ``mesh`` on the floor: optional flip about x, yaw about z, lowest point at z = 0."""
    R = _resting_rotation(yaw, face_down)
    return RigidPose(R, _resting_translation(mesh, scale, R, xy))


def _fits(centre, radius, centres, radii, tolerance=OVERLAP_TOLERANCE):
    if not len(radii):
        return True
    dist = np.linalg.norm(np.asarray(centres) - centre, axis=1)
    depth = radius + np.asarray(radii) - dist
    return bool(np.all(depth <= tolerance * np.minimum(radius, radii)))


def sample_scene(config, library, seed):
    """Sample a full scene deterministically from ``(config, library, seed)``."""
    if not library:
        raise ConfigError("mesh library is empty")
    rng = np.random.default_rng(np.random.SeedSequence(int(seed) % 2**64))
    lo, hi = config.object_count_range
    count = int(rng.integers(lo, hi + 1))
    kind_order = (MaterialKind.SPECULAR, MaterialKind.TRANSPARENT, MaterialKind.DIFFUSE)
    placed, centres, radii = [], [], []
    a = config.placement_half_extent
    for _ in range(count):
        mesh = library[int(rng.integers(len(library)))]
        scale = float(rng.uniform(*config.scale_range))
        kind = kind_order[int(rng.choice(3, p=config.material_kind_weights))]
        material = sample_material(config, kind, rng)
        mix = float(rng.uniform(*config.texture_mix_range))
        checker = float(rng.uniform(*config.object_checker_range)) if kind is MaterialKind.DIFFUSE else 0.0
        radius = scale * mesh.nocs_extent / 2.0
        pose = None
        for _attempt in range(PLACEMENT_ATTEMPTS):
            yaw = float(rng.uniform(0.0, 2 * math.pi))
            face_down = bool(rng.random() < config.face_down_probability)
            xy = rng.uniform(-a, a, size=2)
            R = _resting_rotation(yaw, face_down)
            t = _resting_translation(mesh, scale, R, xy)
            if _fits(R @ (scale * mesh.nocs_center) + t, radius, centres, radii):
                pose = RigidPose(R, t)
                break
        if pose is not None:
            obj = SceneObject(
                mesh_id=mesh.mesh_id, pose=pose, scale=scale,
                material=replace(material, base_color=tuple(mesh.mean_color)),
                category_label=mesh.category, instance_id=len(placed) + 1,
                nocs_center=tuple(mesh.nocs_center), nocs_extent=mesh.nocs_extent,
                symmetry=mesh.symmetry, texture_checker=checker,
            )
            placed.append(assign_material(obj, material, mix, texture_color=mesh.mean_color))
            centres.append(obj.bounding_center)
            radii.append(radius)
    if count > 0 and not placed:
        raise PlacementOverflow("no object could be placed")
    intensity = float(rng.uniform(*config.env_intensity_range))
    env_color = tuple(float(c) for c in rng.uniform(*config.env_color_range, size=3))
    floor = None
    if config.floor_materials:
        floor_template = config.floor_materials[int(rng.integers(len(config.floor_materials)))]
        floor = Floor(jitter_template(floor_template, rng), float(rng.uniform(*config.floor_checker_range)))
    return SceneDescription(tuple(placed), EnvLight(env_color, intensity), floor, int(seed))


def sample_camera(config, rng, target=(0.0, 0.0, 0.0)):
    """Left-IR camera pose looking at ``target`` from a random distance / elevation / azimuth."""
    dist = float(rng.uniform(*config.camera_distance_range))
    elev = math.radians(float(rng.uniform(*config.camera_elevation_range)))
    azim = math.radians(float(rng.uniform(*config.camera_azimuth_range)))
    target = np.asarray(target, dtype=np.float64)
    offset = dist * np.array([math.cos(elev) * math.cos(azim), math.cos(elev) * math.sin(azim), math.sin(elev)])
    return look_at(target + offset, target)

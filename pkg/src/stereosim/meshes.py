"""Mesh library: analytic spheres, tessellated primitives and OBJ ingestion."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, MeshLoadError

SYMMETRIES = ("none", "axis_z")


@dataclass(eq=False)
class Mesh:
    """A library entry.

    ``kind`` is ``"sphere"`` (analytic, radius ``radius`` about the origin) or
    ``"triangles"`` (``vertices`` / ``faces`` with outward counter-clockwise winding).
    """

    mesh_id: str
    kind: str
    vertices: np.ndarray
    faces: np.ndarray = field(default_factory=lambda: np.zeros((0, 3), dtype=np.int64))
    radius: float = 0.0
    category: str = "object"
    mean_color: tuple = (0.7, 0.7, 0.7)
    symmetry: str = "none"

    @property
    def bbox(self):
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    @property
    def nocs_center(self):
        lo, hi = self.bbox
        return (lo + hi) / 2.0

    @property
    def nocs_extent(self):
        """Diagonal of the tight bounding box; NOCS coordinates divide by it."""
        lo, hi = self.bbox
        return float(np.linalg.norm(hi - lo))

    @property
    def bounding_radius(self):
        return self.nocs_extent / 2.0

    def nocs_box_extents(self):
        """Bounding-box side lengths in NOCS units (each <= 1)."""
        lo, hi = self.bbox
        return (hi - lo) / self.nocs_extent

    def to_nocs(self, points):
        return (np.asarray(points, dtype=np.float64) - self.nocs_center) / self.nocs_extent + 0.5


def sphere(radius=0.05, mesh_id="sphere", **kw):
    r = float(radius)
    # only the bounding-box corners matter for sphere bookkeeping
    corners = np.array([[sx, sy, sz] for sx in (-r, r) for sy in (-r, r) for sz in (-r, r)])
    return Mesh(mesh_id, "sphere", corners, radius=r, **kw)


def box(extents=(0.1, 0.1, 0.1), mesh_id="box", **kw):
    hx, hy, hz = (np.asarray(extents, dtype=np.float64) / 2.0)
    v = np.array([[-hx, -hy, -hz], [hx, -hy, -hz], [hx, hy, -hz], [-hx, hy, -hz],
                  [-hx, -hy, hz], [hx, -hy, hz], [hx, hy, hz], [-hx, hy, hz]])
    f = np.array([[0, 2, 1], [0, 3, 2],   # bottom (-z)
                  [4, 5, 6], [4, 6, 7],   # top (+z)
                  [0, 1, 5], [0, 5, 4],   # -y
                  [2, 3, 7], [2, 7, 6],   # +y
                  [1, 2, 6], [1, 6, 5],   # +x
                  [3, 0, 4], [3, 4, 7]])  # -x
    return Mesh(mesh_id, "triangles", v, f, **kw)


def cylinder(radius=0.04, height=0.12, segments=48, mesh_id="cylinder", **kw):
    """Closed cylinder along z, centred at the origin."""
    a = np.linspace(0.0, 2 * np.pi, segments, endpoint=False)
    ring = np.stack([radius * np.cos(a), radius * np.sin(a)], axis=1)
    h = height / 2.0
    bottom = np.column_stack([ring, np.full(segments, -h)])
    top = np.column_stack([ring, np.full(segments, h)])
    v = np.vstack([bottom, top, [[0.0, 0.0, -h], [0.0, 0.0, h]]])
    cb, ct = 2 * segments, 2 * segments + 1
    faces = []
    for i in range(segments):
        j = (i + 1) % segments
        faces += [[i, j, segments + j], [i, segments + j, segments + i]]
        faces += [[cb, j, i], [ct, segments + i, segments + j]]
    return Mesh(mesh_id, "triangles", v, np.array(faces, dtype=np.int64), **kw)


def load_obj(path, mesh_id=None, **kw):
    """Parse vertices and (fan-triangulated) faces from a Wavefront OBJ file."""
    path = Path(path)
    verts, faces = [], []
    try:
        with open(path) as fh:
            for lineno, line in enumerate(fh, 1):
                parts = line.split()
                if not parts:
                    continue
                if parts[0] == "v":
                    verts.append([float(x) for x in parts[1:4]])
                elif parts[0] == "f":
                    idx = []
                    for tok in parts[1:]:
                        i = int(tok.split("/")[0])
                        idx.append(i - 1 if i > 0 else len(verts) + i)
                    if len(idx) < 3:
                        raise MeshLoadError(path, f"line {lineno}: face with fewer than 3 vertices")
                    for k in range(1, len(idx) - 1):
                        faces.append([idx[0], idx[k], idx[k + 1]])
    except OSError as exc:
        raise MeshLoadError(path, str(exc)) from exc
    except (ValueError, IndexError) as exc:
        raise MeshLoadError(path, f"malformed OBJ ({exc})") from exc
    if not verts or not faces:
        raise MeshLoadError(path, "no vertices or faces")
    v = np.asarray(verts, dtype=np.float64)
    f = np.asarray(faces, dtype=np.int64)
    if f.min() < 0 or f.max() >= len(v):
        raise MeshLoadError(path, "face index out of range")
    if np.linalg.norm(v.max(axis=0) - v.min(axis=0)) <= 0:
        raise MeshLoadError(path, "degenerate bounding box")
    return Mesh(mesh_id or path.stem, "triangles", v, f, **kw)


_PRIMITIVES = {"sphere": sphere, "box": box, "cylinder": cylinder}


def mesh_from_entry(entry, base_dir="."):
    """Build a Mesh from one ``library`` entry of the JSON config."""
    entry = dict(entry)
    source = entry.pop("source")
    mesh_id = entry.pop("id", None) or (Path(source).stem if source not in _PRIMITIVES else source)
    kw = {
        "category": entry.pop("category", "object"),
        "mean_color": tuple(entry.pop("color", (0.7, 0.7, 0.7))),
        "symmetry": entry.pop("symmetry", "none"),
    }
    if kw["symmetry"] not in SYMMETRIES:
        raise ConfigError(f"unknown symmetry {kw['symmetry']!r}")
    if source in _PRIMITIVES:
        try:
            return _PRIMITIVES[source](mesh_id=mesh_id, **entry, **kw)
        except TypeError as exc:
            raise ConfigError(f"bad parameters for primitive {source}: {exc}") from exc
    path = Path(source)
    if not path.is_absolute():
        path = Path(base_dir) / path
    return load_obj(path, mesh_id=mesh_id, **kw)


def load_library(entries=(), mesh_dir=None, base_dir="."):
    """Assemble the mesh library from config entries and every ``*.obj`` under ``mesh_dir``.

    OBJ files found in ``mesh_dir`` take their category from the file-name
    prefix before the first underscore (``mug_03.obj`` -> ``mug``).
    """
    library = [mesh_from_entry(e, base_dir) for e in entries]
    if mesh_dir:
        mesh_dir = Path(base_dir) / mesh_dir
        if not mesh_dir.is_dir():
            raise MeshLoadError(mesh_dir, "mesh directory not found")
        for p in sorted(mesh_dir.glob("*.obj")):
            library.append(load_obj(p, category=p.stem.split("_")[0]))
    ids = [m.mesh_id for m in library]
    if len(set(ids)) != len(ids):
        raise ConfigError("mesh ids in the library must be unique")
    return library


def library_by_id(library):
    return {m.mesh_id: m for m in library}


def default_library():
    return [
        box((0.12, 0.08, 0.05), mesh_id="box_a", category="box"),
        box((0.06, 0.06, 0.14), mesh_id="box_b", category="box"),
        cylinder(0.04, 0.12, mesh_id="can", category="can", symmetry="axis_z"),
        cylinder(0.035, 0.18, mesh_id="bottle", category="bottle", symmetry="axis_z"),
        sphere(0.05, mesh_id="ball", category="ball"),
    ]


__all__ = ["Mesh", "sphere", "box", "cylinder", "load_obj", "load_library", "mesh_from_entry",
           "default_library", "library_by_id", "SYMMETRIES"]

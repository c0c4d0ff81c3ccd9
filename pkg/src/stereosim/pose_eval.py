"""Category-level pose evaluation: similarity fitting from NOCS correspondences,
3D box IoU and rotation / translation error thresholds."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .camera import unproject
from .errors import DegenerateConfiguration, EmptyInput, NoConsensus

IOU_THRESHOLDS = (0.25, 0.50, 0.75)
POSE_THRESHOLDS = ((5, 2), (5, 5), (10, 2), (10, 5), (10, 10))  # (degrees, cm)
VOXEL_RESOLUTION = 64


class Symmetry(str, enum.Enum):
    NONE = "none"
    AXIS_Z = "axis_z"


@dataclass(frozen=True, eq=False)
class SimilarityPose:
    """``x -> scale * rotation @ x + translation``."""

    scale: float
    rotation: np.ndarray
    translation: np.ndarray
    residual_rms: float = float("nan")

    def __post_init__(self):
        R = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        if not self.scale > 0:
            raise ValueError("scale must be positive")
        if not np.allclose(R.T @ R, np.eye(3), atol=1e-9) or abs(np.linalg.det(R) - 1) > 1e-9:
            raise ValueError("rotation must be proper orthonormal")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", np.array(self.translation, dtype=np.float64).reshape(3))

    def apply(self, pts):
        return self.scale * np.asarray(pts, dtype=np.float64) @ self.rotation.T + self.translation

    def to_dict(self):
        return {"scale": self.scale, "rotation": self.rotation.tolist(), "translation": self.translation.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["scale"]), np.array(d["rotation"]), np.array(d["translation"]))


@dataclass(frozen=True, eq=False)
class OrientedBox3D:
    """Box of side lengths ``extents`` (NOCS units) centred at the origin, mapped by ``pose``."""

    pose: SimilarityPose
    extents: np.ndarray

    def __post_init__(self):
        e = np.array(self.extents, dtype=np.float64).reshape(3)
        if np.any(e <= 0):
            raise ValueError("extents must be positive")
        object.__setattr__(self, "extents", e)

    @property
    def half_sizes(self):
        """World-space half lengths along the box's own axes."""
        return self.pose.scale * self.extents / 2.0

    def corners(self):
        signs = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)], dtype=np.float64)
        return self.pose.apply(signs * self.extents / 2.0)

    def aabb(self):
        half = np.abs(self.pose.rotation) @ self.half_sizes
        return self.pose.translation - half, self.pose.translation + half

    def volume(self):
        return float(np.prod(2.0 * self.half_sizes))

    def contains(self, pts):
        local = (np.asarray(pts) - self.pose.translation) @ self.pose.rotation
        return np.all(np.abs(local) <= self.half_sizes, axis=-1)


def fit_similarity(nocs_points, world_points):
    """Least-squares similarity transform taking ``nocs_points`` onto ``world_points`` (Umeyama)."""
    src = np.asarray(nocs_points, dtype=np.float64)
    dst = np.asarray(world_points, dtype=np.float64)
    if src.shape != dst.shape or src.ndim != 2 or src.shape[1] != 3:
        raise ValueError("expected two N x 3 arrays of equal shape")
    n = len(src)
    if n < 3:
        raise DegenerateConfiguration("need at least 3 correspondences")
    mu_s, mu_d = src.mean(axis=0), dst.mean(axis=0)
    xs, xd = src - mu_s, dst - mu_d
    sv = np.linalg.svd(xs.T @ xs / n, compute_uv=False)
    if sv[0] <= 0 or sv[1] <= 1e-10 * sv[0]:
        raise DegenerateConfiguration("source points are collinear or coincident")
    cov = xd.T @ xs / n
    U, D, Vt = np.linalg.svd(cov)
    S = np.ones(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2] = -1.0
    R = (U * S) @ Vt
    var_s = np.sum(xs * xs) / n
    scale = float(np.dot(D, S) / var_s)
    if not scale > 0:
        raise DegenerateConfiguration("non-positive scale")
    t = mu_d - scale * R @ mu_s
    res = dst - (scale * src @ R.T + t)
    rms = float(np.sqrt(np.mean(np.sum(res * res, axis=1))))
    return SimilarityPose(scale, R, t, rms)


def fit_similarity_ransac(nocs_points, world_points, inlier_threshold=0.01, iterations=200, seed=0):
    """Similarity fit robust to outlier correspondences.

    Three-point hypotheses are scored by the number of correspondences within
    ``inlier_threshold`` metres; the best consensus set is refit with
    :func:`fit_similarity` until it stops changing.
    """
    src = np.asarray(nocs_points, dtype=np.float64)
    dst = np.asarray(world_points, dtype=np.float64)
    n = len(src)
    if n < 4:
        raise NoConsensus("need at least 4 correspondences")
    rng = np.random.default_rng(seed)
    best = None
    best_count = 0
    for _ in range(iterations):
        idx = rng.choice(n, 3, replace=False)
        try:
            model = fit_similarity(src[idx], dst[idx])
        except DegenerateConfiguration:
            continue
        inl = np.linalg.norm(model.apply(src) - dst, axis=1) < inlier_threshold
        count = int(inl.sum())
        if count > best_count:
            best, best_count = inl, count
    if best_count < 4:
        raise NoConsensus(f"largest consensus set has {best_count} < 4 points")
    for _ in range(10):
        try:
            model = fit_similarity(src[best], dst[best])
        except DegenerateConfiguration as exc:
            raise NoConsensus("consensus set is degenerate") from exc
        inl = np.linalg.norm(model.apply(src) - dst, axis=1) < inlier_threshold
        if inl.sum() < 4 or np.array_equal(inl, best):
            break
        best = inl
    return model


def _is_axis_aligned(R):
    return np.allclose(np.abs(R) @ np.ones(3), 1.0, atol=1e-9) and np.all(
        (np.abs(R) < 1e-9) | (np.abs(np.abs(R) - 1) < 1e-9))


def iou3d_axis_aligned(a, b):
    """Exact IoU of two boxes whose axes are aligned with the world axes."""
    alo, ahi = a.aabb()
    blo, bhi = b.aabb()
    inter = np.prod(np.clip(np.minimum(ahi, bhi) - np.maximum(alo, blo), 0.0, None))
    union = np.prod(ahi - alo) + np.prod(bhi - blo) - inter
    return float(inter / union)


def iou3d(a, b, resolution=VOXEL_RESOLUTION):
    """3D IoU of two oriented boxes.

    Exact when both boxes are world-axis-aligned; otherwise estimated by testing
    the centres of a ``resolution``^3 voxel grid spanning the boxes' joint AABB.
    """
    alo, ahi = a.aabb()
    blo, bhi = b.aabb()
    if np.any(np.minimum(ahi, bhi) <= np.maximum(alo, blo)):
        return 0.0
    if _is_axis_aligned(a.pose.rotation) and _is_axis_aligned(b.pose.rotation):
        return iou3d_axis_aligned(a, b)
    lo, hi = np.minimum(alo, blo), np.maximum(ahi, bhi)
    step = (hi - lo) / resolution
    axes = [lo[i] + (np.arange(resolution) + 0.5) * step[i] for i in range(3)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    ina = a.contains(grid)
    inb = b.contains(grid)
    union = np.count_nonzero(ina | inb)
    if union == 0:
        return 0.0
    return float(np.count_nonzero(ina & inb) / union)


def _rot_z(theta):
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def align_symmetric(pred, gt):
    """Rotation of ``gt`` about its own z axis that brings it closest to ``pred`` (Frobenius)."""
    M = gt.rotation.T @ pred.rotation
    theta = np.arctan2(M[1, 0] - M[0, 1], M[0, 0] + M[1, 1])
    R = gt.rotation @ _rot_z(theta)
    u, _, vt = np.linalg.svd(R)
    return SimilarityPose(gt.scale, u @ vt, gt.translation)


def pose_error(pred, gt, symmetry=Symmetry.NONE):
    """Rotation error in degrees and translation error in centimetres."""
    symmetry = Symmetry(symmetry)
    if symmetry is Symmetry.AXIS_Z:
        c = float(np.dot(pred.rotation[:, 2], gt.rotation[:, 2]))
    else:
        c = (float(np.trace(pred.rotation @ gt.rotation.T)) - 1.0) / 2.0
    rot = float(np.degrees(np.arccos(np.clip(c, -1.0, 1.0))))
    trans = float(np.linalg.norm(pred.translation - gt.translation) * 100.0)
    return rot, trans


@dataclass(frozen=True, eq=False)
class PoseInstance:
    pred: SimilarityPose
    gt: SimilarityPose
    category: str = "object"
    symmetry: Symmetry = Symmetry.NONE
    pred_extents: np.ndarray | None = None
    gt_extents: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "symmetry", Symmetry(self.symmetry))


@dataclass
class PoseReport:
    iou25: float
    iou50: float
    iou75: float
    accuracy: dict
    per_instance: list = field(default_factory=list)
    per_category: dict = field(default_factory=dict)

    def to_dict(self):
        return {"iou25": self.iou25, "iou50": self.iou50, "iou75": self.iou75, **self.accuracy,
                "n_instances": len(self.per_instance), "per_category": self.per_category,
                "per_instance": self.per_instance}


def threshold_key(deg, cm):
    return f"{deg}deg{cm}cm"


def _summarise(rows):
    n = len(rows)
    out = {}
    for t in IOU_THRESHOLDS:
        out[f"iou{int(round(t * 100))}"] = 100.0 * sum(r["iou"] is not None and r["iou"] >= t for r in rows) / n
    for deg, cm in POSE_THRESHOLDS:
        ok = sum(r["rot_deg"] <= deg and r["trans_cm"] <= cm for r in rows)
        out[threshold_key(deg, cm)] = 100.0 * ok / n
    return out


def aggregate_pose(instances):
    """Accuracy percentages at the IoU and (degree, cm) thresholds over ``instances``.

    Instances without extents on either side are scored as IoU failures.
    """
    instances = list(instances)
    if not instances:
        raise EmptyInput("no pose instances to aggregate")
    rows = []
    for inst in instances:
        rot, trans = pose_error(inst.pred, inst.gt, inst.symmetry)
        iou = None
        if inst.pred_extents is not None and inst.gt_extents is not None:
            gt = align_symmetric(inst.pred, inst.gt) if inst.symmetry is Symmetry.AXIS_Z else inst.gt
            iou = iou3d(OrientedBox3D(inst.pred, inst.pred_extents), OrientedBox3D(gt, inst.gt_extents))
        rows.append({"category": inst.category, "rot_deg": rot, "trans_cm": trans, "iou": iou})
    summary = _summarise(rows)
    cats = {}
    for cat in sorted({r["category"] for r in rows}):
        cats[cat] = _summarise([r for r in rows if r["category"] == cat])
    return PoseReport(
        iou25=summary.pop("iou25"), iou50=summary.pop("iou50"), iou75=summary.pop("iou75"),
        accuracy=summary, per_instance=rows, per_category=cats,
    )


def nocs_correspondences(nocs_map, depth, mask, instance_id, k):
    """Centred NOCS coordinates and camera-frame points for one instance's valid pixels."""
    nocs_map = np.asarray(nocs_map, dtype=np.float64)
    depth = np.asarray(depth, dtype=np.float64)
    sel = (np.asarray(mask) == instance_id) & (depth > 0) & np.any(nocs_map > 0, axis=-1)
    ys, xs = np.nonzero(sel)
    pix = np.stack([xs, ys], axis=1).astype(np.float64)
    world = unproject(pix, depth[ys, xs], k) if len(ys) else np.zeros((0, 3))
    return nocs_map[ys, xs] - 0.5, world


def fit_instance_pose(nocs_map, depth, mask, instance_id, k, inlier_threshold=0.01, iterations=200, seed=0):
    """Fit the NOCS->camera similarity of one instance; returns (pose, NOCS box extents)."""
    src, dst = nocs_correspondences(nocs_map, depth, mask, instance_id, k)
    pose = fit_similarity_ransac(src, dst, inlier_threshold, iterations, seed)
    extents = 2.0 * np.abs(src).max(axis=0)
    return pose, np.maximum(extents, 1e-6)

"""Depth-map evaluation: restoration metrics, confidence fusion, loss terms, normals and gradients."""

from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass

import numpy as np

from .camera import unproject_depth_map
from .errors import SizeMismatch

EVAL_SHAPE = (126, 224)
DELTA_THRESHOLDS = (1.05, 1.10, 1.25)
MAX_DEPTH = 100.0


@dataclass(frozen=True, eq=False)
class DepthMap:
    """Metric depth with 0 marking invalid pixels."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ValueError("depth map must be 2-D")
        if not np.all(np.isfinite(v)) or np.any(v < 0) or np.any(v >= MAX_DEPTH):
            raise ValueError(f"depth values must be finite and in [0, {MAX_DEPTH})")
        object.__setattr__(self, "values", v)

    @property
    def valid(self):
        return self.values > 0

    @property
    def shape(self):
        return self.values.shape


@dataclass(frozen=True, eq=False)
class ConfidenceMap:
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if np.any(~np.isfinite(v)) or v.min(initial=0.0) < 0 or v.max(initial=0.0) > 1:
            raise ValueError("confidence must lie in [0, 1]")
        object.__setattr__(self, "values", v)


class Scope(str, enum.Enum):
    ALL_OBJECTS = "all_objects"
    CHALLENGING = "challenging"


@dataclass(frozen=True, eq=False)
class EvalMask:
    region: np.ndarray
    scope: Scope = Scope.ALL_OBJECTS

    def __post_init__(self):
        object.__setattr__(self, "region", np.asarray(self.region, dtype=bool))
        object.__setattr__(self, "scope", Scope(self.scope))


@dataclass(frozen=True)
class MetricsReport:
    """Depth restoration metrics over the evaluated pixels.

    Pixels inside the mask with valid ground truth are evaluated. Unless the
    report was computed with ``skip_invalid``, an invalid prediction counts as
    a delta failure and enters RMSE/REL/MAE with a predicted depth of 0.
    An empty selection yields ``n_pixels == 0`` and NaN metrics.
    """

    rmse: float
    rel: float
    mae: float
    delta_105: float
    delta_110: float
    delta_125: float
    n_pixels: int

    @property
    def defined(self):
        return self.n_pixels > 0

    def to_dict(self):
        d = asdict(self)
        # JSON has no NaN; undefined metrics serialise as null
        return {k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in d.items()}


@dataclass(frozen=True)
class LossWeights:
    w_final: float = 1.0
    w_initial: float = 1.0
    w_n: float = 1.0
    w_d: float = 1.0
    w_g: float = 1.0
    fg_boost: float = 2.0

    def __post_init__(self):
        if min(self.w_final, self.w_initial, self.w_n, self.w_d, self.w_g) < 0:
            raise ValueError("loss weights must be >= 0")
        if self.fg_boost < 1:
            raise ValueError("fg_boost must be >= 1")


def _same_shape(*arrays):
    shapes = {np.shape(a)[:2] for a in arrays}
    if len(shapes) != 1:
        raise SizeMismatch(f"shape mismatch: {sorted(shapes)}")


def _values(x):
    if isinstance(x, DepthMap):
        return x.values
    if isinstance(x, (EvalMask,)):
        return x.region
    return np.asarray(x)


def resize_for_eval(m, target=EVAL_SHAPE):
    """Nearest-neighbour resample of a depth map, mask or plain array to ``target`` (H, W)."""
    a = _values(m)
    h, w = a.shape[:2]
    th, tw = target
    if (h, w) != (th, tw):
        # sample the source pixel containing each target pixel centre
        rows = ((2 * np.arange(th) + 1) * h) // (2 * th)
        cols = ((2 * np.arange(tw) + 1) * w) // (2 * tw)
        a = a[rows][:, cols]
    if isinstance(m, DepthMap):
        return DepthMap(a)
    if isinstance(m, EvalMask):
        return EvalMask(a, m.scope)
    return a


def compute_metrics(pred, gt, mask, skip_invalid=False):
    """RMSE, REL, MAE and delta accuracies of ``pred`` against ``gt`` inside ``mask``."""
    p_all, g_all, region = _values(pred).astype(np.float64), _values(gt).astype(np.float64), _values(mask)
    _same_shape(p_all, g_all, region)
    sel = region.astype(bool) & (g_all > 0)
    if skip_invalid:
        sel &= p_all > 0
    n = int(sel.sum())
    if n == 0:
        nan = float("nan")
        return MetricsReport(nan, nan, nan, nan, nan, nan, 0)
    p = p_all[sel]
    g = g_all[sel]
    err = p - g
    abs_err = np.abs(err)
    with np.errstate(divide="ignore", over="ignore"):
        ratio = np.where(p > 0, np.maximum(p / g, g / np.where(p > 0, p, 1.0)), np.inf)
        rel = float(np.sum(abs_err / g) / n)
    deltas = [100.0 * np.count_nonzero(ratio < t) / n for t in DELTA_THRESHOLDS]
    return MetricsReport(
        rmse=float(np.sqrt(np.sum(err * err) / n)),
        rel=rel,
        mae=float(np.sum(abs_err) / n),
        delta_105=float(deltas[0]),
        delta_110=float(deltas[1]),
        delta_125=float(deltas[2]),
        n_pixels=n,
    )


def fuse_confidence(raw, pred, conf):
    """Per-pixel blend ``conf * pred + (1 - conf) * raw``.

    Where the raw depth is missing the prediction is used as is; where the
    prediction is missing the raw depth is kept.
    """
    r, p = _values(raw).astype(np.float64), _values(pred).astype(np.float64)
    c = conf.values if isinstance(conf, ConfidenceMap) else ConfidenceMap(conf).values
    _same_shape(r, p, c)
    rv, pv = r > 0, p > 0
    both = rv & pv
    mixed = c * p + (1.0 - c) * r
    mixed = np.clip(mixed, np.minimum(r, p), np.maximum(r, p))
    out = np.where(both, mixed, np.where(rv, r, np.where(pv, p, 0.0)))
    return DepthMap(out)


def _neighbour_diff(v, valid, axis):
    """Central / one-sided differences of ``v`` along ``axis`` (1 = x, 0 = y) over valid pixels.

    Returns the per-pixel difference (central ones halved) and its validity.
    """
    fwd = np.zeros_like(v)
    bwd = np.zeros_like(v)
    fv = np.zeros(valid.shape, dtype=bool)
    bv = np.zeros(valid.shape, dtype=bool)
    if axis == 1:
        fwd[:, :-1] = v[:, 1:] - v[:, :-1]
        fv[:, :-1] = valid[:, 1:] & valid[:, :-1]
        bwd[:, 1:] = v[:, 1:] - v[:, :-1]
        bv[:, 1:] = valid[:, 1:] & valid[:, :-1]
    else:
        fwd[:-1] = v[1:] - v[:-1]
        fv[:-1] = valid[1:] & valid[:-1]
        bwd[1:] = v[1:] - v[:-1]
        bv[1:] = valid[1:] & valid[:-1]
    if v.ndim == 3:
        fv3, bv3 = fv[..., None], bv[..., None]
    else:
        fv3, bv3 = fv, bv
    central = fv3 & bv3
    diff = np.where(central, (fwd + bwd) / 2.0, np.where(fv3, fwd, np.where(bv3, bwd, 0.0)))
    return diff, fv | bv


def gradient_map(depth):
    """Per-pixel depth gradient (d/dx, d/dy) in metres per pixel and its validity, both H x W x 2.

    Central differences where both neighbours are valid, one-sided at the edge
    of the valid region, invalid where a pixel has no valid neighbour on an axis.
    """
    v = _values(depth).astype(np.float64)
    valid = v > 0
    gx, vx = _neighbour_diff(v, valid, 1)
    gy, vy = _neighbour_diff(v, valid, 0)
    grad = np.stack([gx, gy], axis=-1)
    ok = np.stack([vx, vy], axis=-1)
    return np.where(ok, grad, 0.0), ok


def normals_from_depth(depth, k):
    """Unit surface normals (camera frame, facing the camera) and their validity mask."""
    v = _values(depth).astype(np.float64)
    valid = v > 0
    pts = unproject_depth_map(v, k)
    tx, vx = _neighbour_diff(pts, valid, 1)
    ty, vy = _neighbour_diff(pts, valid, 0)
    n = np.cross(tx, ty)
    norm = np.linalg.norm(n, axis=-1)
    ok = vx & vy & (norm > 0)
    n = np.where(ok[..., None], n / np.where(norm > 0, norm, 1.0)[..., None], 0.0)
    n = np.where(n[..., 2:3] > 0, -n, n)
    return n, ok


def _weighted_l1(diff, region, weight):
    """Mean of ``weight * |diff|`` over the selected elements (0 when nothing is selected)."""
    if diff.ndim == 3:
        w = np.broadcast_to(weight[..., None], diff.shape)
        r = np.broadcast_to(region if region.ndim == 3 else region[..., None], diff.shape)
    else:
        w, r = weight, region
    count = int(np.count_nonzero(r))
    if count == 0:
        return 0.0
    return float(np.sum(np.abs(diff[r]) * w[r]) / count)


def depth_loss_terms(pred, gt, fg_mask, k, weights):
    """Normal, depth and gradient L1 terms of one prediction."""
    p, g = _values(pred).astype(np.float64), _values(gt).astype(np.float64)
    fg = _values(fg_mask).astype(bool)
    _same_shape(p, g, fg)
    weight = np.where(fg, weights.fg_boost, 1.0)
    gvalid = g > 0
    l_d = _weighted_l1(p - g, gvalid, weight)
    np_, npv = normals_from_depth(p, k)
    ng, ngv = normals_from_depth(g, k)
    l_n = _weighted_l1(np_ - ng, npv & ngv, weight)
    gp, gpv = gradient_map(p)
    gg, ggv = gradient_map(g)
    l_g = _weighted_l1(gp - gg, gpv & ggv, weight)
    total = weights.w_n * l_n + weights.w_d * l_d + weights.w_g * l_g
    return {"normal": l_n, "depth": l_d, "gradient": l_g, "total": total}


def restoration_loss(pred_final, pred_initial, gt, fg_mask, k, weights=None):
    """Weighted sum of the final and initial prediction losses.

    Each prediction's loss is ``w_n * L_normal + w_d * L_depth + w_g * L_gradient``
    with component-wise L1 errors; pixels in ``fg_mask`` are weighted by
    ``fg_boost``. Returns ``(total, breakdown)``.
    """
    weights = weights or LossWeights()
    final = depth_loss_terms(pred_final, gt, fg_mask, k, weights)
    initial = depth_loss_terms(pred_initial, gt, fg_mask, k, weights)
    total = weights.w_final * final["total"] + weights.w_initial * initial["total"]
    return total, {"final": final, "initial": initial}

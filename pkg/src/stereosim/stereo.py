"""Block-matching stereo: cost volume, winner-take-all with quadratic sub-pixel
refinement, and the post-processing chain that turns an IR pair into depth.

Images are rectified: row y of the left image matches row y of the right
image, and a left pixel x with disparity d corresponds to right pixel x - d.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .camera import MIN_DISPARITY, disparity_to_depth
from .depth_eval import MAX_DEPTH, DepthMap
from .errors import BadKernel, SizeMismatch

CENSUS_SHAPE = (7, 9)  # (height, width)


class CostMetric(str, enum.Enum):
    SAD = "sad"
    CENSUS = "census"


@dataclass(frozen=True)
class MatcherConfig:
    max_disparity: int = 128
    block_radius: int = 5
    metric: CostMetric = CostMetric.SAD
    lr_threshold: float = 1.0
    uniqueness_margin: float = 0.05
    median_kernel: int = 5
    min_disparity: float = MIN_DISPARITY

    def __post_init__(self):
        object.__setattr__(self, "metric", CostMetric(self.metric))
        if self.max_disparity < 1 or self.block_radius < 0 or self.lr_threshold <= 0 or self.min_disparity < 0:
            raise ValueError("matcher parameters must be positive")
        if not 0.0 <= self.uniqueness_margin < 1.0:
            raise ValueError("uniqueness_margin must lie in [0, 1)")
        if self.median_kernel < 3 or self.median_kernel % 2 == 0:
            raise BadKernel("median_kernel must be odd and >= 3")

    def to_dict(self):
        return {"max_disparity": self.max_disparity, "block_radius": self.block_radius,
                "metric": self.metric.value, "lr_threshold": self.lr_threshold,
                "uniqueness_margin": self.uniqueness_margin, "median_kernel": self.median_kernel,
                "min_disparity": self.min_disparity}


@dataclass(eq=False)
class CostVolume:
    """Matching costs, H x W x (max_disparity + 1); ``inf`` where a block leaves an image."""

    costs: np.ndarray
    block_radius: int
    metric: CostMetric

    @property
    def max_disparity(self):
        return self.costs.shape[2] - 1


@dataclass(eq=False)
class DisparityMap:
    """Sub-pixel disparities with a validity mask.

    ``flat`` marks pixels whose cost curve was degenerate at the minimum
    (zero curvature); it is carried so the uniqueness stage can reject them.
    """

    values: np.ndarray
    valid: np.ndarray
    flat: np.ndarray | None = None

    def with_valid(self, valid):
        return DisparityMap(np.where(valid, self.values, 0.0), valid, self.flat)


def _box_sum(a, r):
    """Sum of ``a`` over (2r+1)^2 windows; NaN where the window leaves the array."""
    h, w = a.shape
    out = np.full((h, w), np.nan)
    if h < 2 * r + 1 or w < 2 * r + 1:
        return out
    s = np.zeros((h + 1, w + 1))
    np.cumsum(a, axis=0, out=s[1:, 1:])
    np.cumsum(s[1:, 1:], axis=1, out=s[1:, 1:])
    k = 2 * r + 1
    box = s[k:, k:] - s[:-k, k:] - s[k:, :-k] + s[:-k, :-k]
    out[r:h - r, r:w - r] = np.maximum(box, 0.0)
    return out


def census_transform(img):
    """62-bit census codes over a 7 x 9 window (centre excluded); 0 where the window leaves the image."""
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    ry, rx = CENSUS_SHAPE[0] // 2, CENSUS_SHAPE[1] // 2
    codes = np.zeros((h, w), dtype=np.uint64)
    if h <= 2 * ry or w <= 2 * rx:
        return codes
    centre = img[ry:h - ry, rx:w - rx]
    acc = np.zeros(centre.shape, dtype=np.uint64)
    bit = 0
    for dy in range(-ry, ry + 1):
        for dx in range(-rx, rx + 1):
            if dy == 0 and dx == 0:
                continue
            nb = img[ry + dy:h - ry + dy, rx + dx:w - rx + dx]
            acc |= (nb < centre).astype(np.uint64) << np.uint64(bit)
            bit += 1
    codes[ry:h - ry, rx:w - rx] = acc
    return codes


def _check_pair(left, right):
    left = np.asarray(left, dtype=np.float64)
    right = np.asarray(right, dtype=np.float64)
    if left.shape != right.shape or left.ndim != 2:
        raise SizeMismatch(f"left {left.shape} and right {right.shape} must be equal 2-D shapes")
    return left, right


def compute_cost_volume(left, right, cfg=None):
    """Block matching costs between ``left(y, x)`` and ``right(y, x - d)`` for d = 0..max_disparity."""
    cfg = cfg or MatcherConfig()
    left, right = _check_pair(left, right)
    h, w = left.shape
    r = cfg.block_radius
    nd = cfg.max_disparity + 1
    costs = np.full((h, w, nd), np.inf, dtype=np.float64)
    if cfg.metric is CostMetric.CENSUS:
        cl, cr = census_transform(left), census_transform(right)
        ry, rx = CENSUS_SHAPE[0] // 2, CENSUS_SHAPE[1] // 2
        inner = np.zeros((h, w), dtype=bool)
        inner[ry + r:h - ry - r, rx + r:w - rx - r] = True
    for d in range(min(nd, w)):
        if cfg.metric is CostMetric.SAD:
            diff = np.abs(left[:, d:] - right[:, :w - d])
        else:
            diff = np.bitwise_count(cl[:, d:] ^ cr[:, :w - d]).astype(np.float64)
        # diff column j is left column j + d; the block must fit inside the shifted strip
        box = _box_sum(diff, r)
        if cfg.metric is CostMetric.CENSUS:
            # the right block sits at x - d, so both windows must avoid the census border
            box = np.where(inner[:, d:] & inner[:, :w - d], box, np.nan)
        costs[:, d:, d] = np.where(np.isnan(box), np.inf, box)
    return CostVolume(costs, r, cfg.metric)


def right_view_volume(volume):
    """Costs for matching right(y, x) against left(y, x + d), derived from the left volume."""
    c = volume.costs
    h, w, nd = c.shape
    out = np.full_like(c, np.inf)
    for d in range(min(nd, w)):
        out[:, :w - d, d] = c[:, d:, d]
    return CostVolume(out, volume.block_radius, volume.metric)


def _take(costs, idx):
    return np.take_along_axis(costs, idx[..., None], axis=2)[..., 0]


def wta_subpixel(volume, cfg=None):
    """Winner-take-all disparity (ties to the smallest d) refined by a parabola through the
    three costs around the minimum."""
    c = volume.costs
    nd = c.shape[2]
    best = np.argmin(c, axis=2)
    c0 = _take(c, best)
    valid = np.isfinite(c0)
    lo = np.maximum(best - 1, 0)
    hi = np.minimum(best + 1, nd - 1)
    cm = _take(c, lo)
    cp = _take(c, hi)
    interior = (best > 0) & (best < nd - 1) & np.isfinite(cm) & np.isfinite(cp)
    with np.errstate(invalid="ignore"):
        denom = cm + cp - 2.0 * c0
    flat = np.where(interior, denom == 0, np.where(best == 0, cp == c0, cm == c0)) & valid
    use = interior & (denom != 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        offset = np.where(use, (cm - cp) / (2.0 * np.where(use, denom, 1.0)), 0.0)
    offset = np.clip(offset, -0.5, 0.5)
    values = np.clip(best + offset, 0.0, nd - 1)
    return DisparityMap(np.where(valid, values, 0.0), valid, flat)


def lr_consistency(disp_left, disp_right, threshold=1.0):
    """Keep left pixels whose disparity agrees with the right map at x - round(d) within ``threshold``."""
    if disp_left.values.shape != disp_right.values.shape:
        raise SizeMismatch("left and right disparity maps differ in shape")
    h, w = disp_left.values.shape
    xs = np.arange(w)[None, :] - np.floor(disp_left.values + 0.5).astype(np.int64)
    inside = (xs >= 0) & (xs < w)
    xr = np.clip(xs, 0, w - 1)
    rows = np.arange(h)[:, None]
    dr = disp_right.values[rows, xr]
    vr = disp_right.valid[rows, xr]
    ok = disp_left.valid & inside & vr & (np.abs(disp_left.values - dr) <= threshold)
    return disp_left.with_valid(ok)


def uniqueness_filter(volume, disp, margin=0.05):
    """Reject pixels whose best cost is not clearly below the best cost outside d* +- 1,
    pixels with a degenerate (flat) cost minimum, and pixels with no alternative to compare."""
    c = volume.costs
    nd = c.shape[2]
    best = np.argmin(c, axis=2)
    c0 = _take(c, best)
    d = np.arange(nd)[None, None, :]
    near = np.abs(d - best[..., None]) <= 1
    second = np.where(near, np.inf, c).min(axis=2)
    with np.errstate(invalid="ignore"):
        ok = np.isfinite(second) & (c0 <= (1.0 - margin) * second)
    if disp.flat is not None:
        ok &= ~disp.flat
    return disp.with_valid(disp.valid & ok)


def median_filter(disp, kernel=5):
    """Median over the valid pixels of each k x k window; invalid pixels stay invalid and
    pixels with fewer than 3 valid neighbours become invalid."""
    if kernel < 3 or kernel % 2 == 0:
        raise BadKernel("kernel must be odd and >= 3")
    r = kernel // 2
    vals = np.where(disp.valid, disp.values, np.nan)
    padded = np.pad(vals, r, constant_values=np.nan)
    win = sliding_window_view(padded, (kernel, kernel)).reshape(*vals.shape, kernel * kernel)
    count = np.count_nonzero(~np.isnan(win), axis=-1)
    keep = disp.valid & (count >= 3)
    med = np.zeros(vals.shape)
    if keep.any():
        med[keep] = np.nanmedian(win[keep], axis=-1)
    return DisparityMap(np.where(keep, med, 0.0), keep, disp.flat)


def match_disparity(ir_left, ir_right, cfg=None):
    """Full disparity pipeline; returns the final left disparity map."""
    cfg = cfg or MatcherConfig()
    vol = compute_cost_volume(ir_left, ir_right, cfg)
    d_left = wta_subpixel(vol, cfg)
    d_right = wta_subpixel(right_view_volume(vol), cfg)
    d = lr_consistency(d_left, d_right, cfg.lr_threshold)
    d = uniqueness_filter(vol, d, cfg.uniqueness_margin)
    return median_filter(d, cfg.median_kernel)


def simulate_depth(ir_left, ir_right, rig, cfg=None):
    """Depth map from an IR pair: matching, post-processing, then z = fx * baseline / d."""
    cfg = cfg or MatcherConfig()
    disp = match_disparity(ir_left, ir_right, cfg)
    z = disparity_to_depth(np.where(disp.valid, disp.values, 0.0), rig.intrinsics.fx, rig.baseline,
                           cfg.min_disparity)
    z = np.where(z < MAX_DEPTH, z, 0.0)
    return DepthMap(z)

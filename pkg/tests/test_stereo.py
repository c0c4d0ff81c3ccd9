import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.ndimage import gaussian_filter

from stereosim.camera import default_rig
from stereosim.errors import BadKernel, SizeMismatch
from stereosim.stereo import (
    CostMetric, CostVolume, DisparityMap, MatcherConfig, census_transform, compute_cost_volume,
    lr_consistency, match_disparity, median_filter, right_view_volume, simulate_depth, uniqueness_filter,
    wta_subpixel,
)


def texture(h, w, seed=0, sigma=1.0):
    rng = np.random.default_rng(seed)
    t = gaussian_filter(rng.random((h, w)), sigma)
    return (t - t.min()) / (t.max() - t.min())


def shifted_pair(h=40, w=80, shift=7, seed=0):
    """Right image shifted so that left(y, x) == right(y, x - shift)."""
    big = texture(h, w + shift, seed)
    return big[:, :w], big[:, shift:]


def test_cost_volume_matches_scalar_oracle():
    rng = np.random.default_rng(3)
    left, right = rng.random((9, 14)), rng.random((9, 14))
    cfg = MatcherConfig(max_disparity=5, block_radius=1)
    vol = compute_cost_volume(left, right, cfg).costs
    h, w = left.shape
    for y in range(h):
        for x in range(w):
            for d in range(6):
                inside = 1 <= y < h - 1 and 1 <= x - d and x < w - 1
                if not inside:
                    assert vol[y, x, d] == np.inf
                    continue
                s = 0.0
                for dy in (-1, 0, 1):
                    for dx in (-1, 0, 1):
                        s += abs(left[y + dy, x + dx] - right[y + dy, x - d + dx])
                assert vol[y, x, d] == pytest.approx(s, rel=1e-12, abs=1e-12)


def test_identical_images_have_zero_cost_at_zero_disparity():
    img = texture(30, 40)
    vol = compute_cost_volume(img, img, MatcherConfig(max_disparity=8))
    r = vol.block_radius
    assert np.allclose(vol.costs[r:-r, r:-r, 0], 0.0, atol=1e-9)


@pytest.mark.parametrize("metric", ["sad", "census"])
def test_shift_is_recovered(metric):
    left, right = shifted_pair(shift=7)
    cfg = MatcherConfig(max_disparity=16, metric=metric)
    vol = compute_cost_volume(left, right, cfg)
    best = np.argmin(vol.costs, axis=2)
    interior = np.isfinite(vol.costs[..., 7])
    assert interior.sum() > 500
    assert np.all(best[interior] == 7)


def test_constant_images_are_ambiguous_and_rejected():
    img = np.full((30, 40), 0.3)
    cfg = MatcherConfig(max_disparity=8)
    vol = compute_cost_volume(img, img, cfg)
    finite = np.isfinite(vol.costs)
    assert np.all(vol.costs[finite] == 0)
    disp = wta_subpixel(vol, cfg)
    assert not uniqueness_filter(vol, disp, 0.05).valid.any()
    assert not match_disparity(img, img, cfg).valid.any()


def test_size_mismatch():
    with pytest.raises(SizeMismatch):
        compute_cost_volume(np.zeros((4, 5)), np.zeros((4, 6)))
    a = DisparityMap(np.zeros((3, 3)), np.ones((3, 3), bool))
    b = DisparityMap(np.zeros((3, 4)), np.ones((3, 4), bool))
    with pytest.raises(SizeMismatch):
        lr_consistency(a, b)


def _volume(curve):
    c = np.asarray(curve, dtype=np.float64)[None, None, :]
    return CostVolume(c, 0, CostMetric.SAD)


def test_subpixel_examples():
    assert wta_subpixel(_volume([5, 2, 1, 2, 5])).values[0, 0] == pytest.approx(2.0)
    assert wta_subpixel(_volume([5, 3, 1, 2, 5])).values[0, 0] == pytest.approx(2 + 1 / 6)
    flat = wta_subpixel(_volume([1, 1, 1]))
    assert flat.values[0, 0] == 0.0 and flat.flat[0, 0]
    assert not wta_subpixel(_volume([2, 1, 1, 3])).flat[0, 0]
    # ties resolve to the smallest disparity; boundary minima get no offset
    assert wta_subpixel(_volume([1, 4, 1, 3])).values[0, 0] == 0.0
    assert wta_subpixel(_volume([4, 3, 2, 1])).values[0, 0] == 3.0


@given(st.lists(st.floats(0, 100), min_size=3, max_size=12))
def test_subpixel_offset_bounded(curve):
    d = wta_subpixel(_volume(curve))
    best = int(np.argmin(curve))
    assert abs(d.values[0, 0] - best) <= 0.5
    assert 0 <= d.values[0, 0] <= len(curve) - 1


def test_lr_consistent_pair_stays_valid():
    left, right = shifted_pair(shift=5)
    cfg = MatcherConfig(max_disparity=12, block_radius=3)
    vol = compute_cost_volume(left, right, cfg)
    dl, dr = wta_subpixel(vol), wta_subpixel(right_view_volume(vol))
    out = lr_consistency(dl, dr, 1.0)
    feasible = dl.valid.copy()
    feasible[:, :5 + 2 * cfg.block_radius] = False  # true match would leave the right image
    assert out.valid[feasible].mean() > 0.99
    unchanged = lr_consistency(dl, dr, np.inf)
    inside = dl.valid & (np.arange(dl.values.shape[1])[None, :] - np.floor(dl.values + 0.5) >= 0)
    assert np.array_equal(unchanged.valid, inside & dr.valid[np.arange(dl.values.shape[0])[:, None],
                                                             np.clip(np.arange(dl.values.shape[1])[None, :]
                                                                     - np.floor(dl.values + 0.5).astype(int),
                                                                     0, None)])


def test_lr_check_removes_half_occlusion():
    h, w, d_bg, d_fg = 60, 120, 4, 12
    bg, fg = texture(h, w + 40, 1), texture(h, w + 40, 2)
    x0, x1, y0, y1 = 50, 80, 10, 50
    left = np.empty((h, w))
    right = np.empty((h, w))
    for x in range(w):
        right[:, x] = bg[:, x + 20]
        left[:, x] = bg[:, x - d_bg + 20]
    for x in range(x0, x1):
        left[y0:y1, x] = fg[y0:y1, x]
        right[y0:y1, x - d_fg] = fg[y0:y1, x]
    cfg = MatcherConfig(max_disparity=20, block_radius=2)
    vol = compute_cost_volume(left, right, cfg)
    dl, dr = wta_subpixel(vol), wta_subpixel(right_view_volume(vol))
    checked = lr_consistency(dl, dr, 1.0)
    # background just left of the square has no partner in the right image
    band = checked.valid[y0 + 5:y1 - 5, x0 - (d_fg - d_bg) + 2:x0 - 2]
    assert band.mean() < 0.2
    far = checked.valid[y0 + 5:y1 - 5, 20:x0 - 15]
    assert far.mean() > 0.95


def test_right_volume_equals_mirrored_matching():
    left, right = texture(20, 50, 4), texture(20, 50, 5)
    cfg = MatcherConfig(max_disparity=9, block_radius=2)
    rv = right_view_volume(compute_cost_volume(left, right, cfg)).costs
    mirrored = compute_cost_volume(right[:, ::-1], left[:, ::-1], cfg).costs[:, ::-1]
    assert np.array_equal(np.isinf(rv), np.isinf(mirrored))
    fin = np.isfinite(rv)
    assert np.allclose(rv[fin], mirrored[fin], rtol=1e-9, atol=1e-12)


def test_uniqueness_keeps_textured_shift():
    left, right = shifted_pair(h=60, w=100, shift=6, seed=9)
    cfg = MatcherConfig(max_disparity=16)
    vol = compute_cost_volume(left, right, cfg)
    disp = wta_subpixel(vol)
    kept = uniqueness_filter(vol, disp, 0.05)
    assert kept.valid[disp.valid].mean() > 0.95


def test_uniqueness_margin_zero_only_removes_flat():
    rng = np.random.default_rng(0)
    costs = rng.random((6, 7, 9))
    costs[0, 0, :] = 1.0  # flat
    vol = CostVolume(costs, 0, CostMetric.SAD)
    disp = wta_subpixel(vol)
    kept = uniqueness_filter(vol, disp, 0.0)
    assert np.array_equal(kept.valid, disp.valid & ~disp.flat)
    assert not kept.valid[0, 0]


def test_median_filter_examples():
    v = np.full((9, 9), 3.0)
    v[4, 4] = 50.0
    out = median_filter(DisparityMap(v, np.ones_like(v, bool)), 3)
    assert out.values[4, 4] == 3.0
    none = median_filter(DisparityMap(np.zeros((5, 5)), np.zeros((5, 5), bool)), 3)
    assert not none.valid.any()
    ramp = np.tile(np.arange(12, dtype=float), (10, 1))
    out = median_filter(DisparityMap(ramp, np.ones_like(ramp, bool)), 5)
    assert np.array_equal(out.values[2:-2, 2:-2], ramp[2:-2, 2:-2])
    for bad in (1, 2, 4):
        with pytest.raises(BadKernel):
            median_filter(DisparityMap(ramp, np.ones_like(ramp, bool)), bad)
    with pytest.raises(BadKernel):
        MatcherConfig(median_kernel=4)


def test_median_filter_matches_direct_median():
    rng = np.random.default_rng(2)
    v = rng.random((8, 9)) * 10
    valid = rng.random((8, 9)) > 0.3
    out = median_filter(DisparityMap(v, valid), 3)
    for y in range(8):
        for x in range(9):
            win = [v[j, i] for j in range(y - 1, y + 2) for i in range(x - 1, x + 2)
                   if 0 <= j < 8 and 0 <= i < 9 and valid[j, i]]
            if valid[y, x] and len(win) >= 3:
                assert out.valid[y, x] and out.values[y, x] == pytest.approx(np.median(win))
            else:
                assert not out.valid[y, x]


@given(st.integers(0, 10_000))
def test_stages_only_shrink_valid_set(seed):
    left, right = texture(24, 40, seed), texture(24, 40, seed + 1)
    cfg = MatcherConfig(max_disparity=10, block_radius=2, median_kernel=3)
    vol = compute_cost_volume(left, right, cfg)
    dl = wta_subpixel(vol)
    dr = wta_subpixel(right_view_volume(vol))
    a = lr_consistency(dl, dr, cfg.lr_threshold)
    b = uniqueness_filter(vol, a, cfg.uniqueness_margin)
    c = median_filter(b, cfg.median_kernel)
    for before, after in ((dl, a), (a, b), (b, c)):
        assert not (after.valid & ~before.valid).any()
        assert after.values.min() >= 0 and after.values.max() <= cfg.max_disparity


def test_census_codes():
    img = np.zeros((9, 11))
    img[4, 5] = 1.0
    codes = census_transform(img)
    assert codes[4, 5] == 2**62 - 1  # all 62 neighbours darker than the centre
    assert codes[0, 0] == 0


def test_simulate_depth_black_pair_is_invalid():
    rig = default_rig(64, 36)
    black = np.zeros((36, 64))
    assert not simulate_depth(black, black, rig).valid.any()


def test_simulate_depth_converts_disparity():
    rig = default_rig(160, 90)
    shift = 9
    left, right = shifted_pair(90, 160, shift, seed=5)
    depth = simulate_depth(left, right, rig, MatcherConfig(max_disparity=20))
    z = rig.intrinsics.fx * rig.baseline / shift
    assert depth.valid.mean() > 0.7
    assert np.allclose(depth.values[depth.valid], z, rtol=0.01)


def test_matching_is_deterministic():
    left, right = shifted_pair(shift=4, seed=8)
    a = match_disparity(left, right, MatcherConfig(max_disparity=10))
    b = match_disparity(left, right, MatcherConfig(max_disparity=10))
    assert np.array_equal(a.values, b.values) and np.array_equal(a.valid, b.valid)

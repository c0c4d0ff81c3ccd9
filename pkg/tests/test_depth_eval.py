import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

import oracles
from helpers import WHITE, plane_scene
from stereosim.camera import Intrinsics, default_rig, look_at
from stereosim.depth_eval import (
    EVAL_SHAPE, ConfidenceMap, DepthMap, EvalMask, LossWeights, Scope, compute_metrics, fuse_confidence,
    gradient_map, normals_from_depth, resize_for_eval, restoration_loss,
)
from stereosim.errors import SizeMismatch
from stereosim.render import render_gt

K8 = Intrinsics(10.0, 12.0, 3.5, 3.0, 8, 8)


def random_instance(rng, h=None, w=None, invalid=0.2):
    h = h or int(rng.integers(2, 9))
    w = w or int(rng.integers(2, 9))
    gt = rng.uniform(0.3, 3.0, (h, w))
    pred = gt * rng.uniform(0.8, 1.3, (h, w))
    gt[rng.random((h, w)) < invalid] = 0
    pred[rng.random((h, w)) < invalid] = 0
    mask = rng.random((h, w)) < 0.8
    return pred, gt, mask


def test_metrics_examples():
    gt = np.full((4, 5), 2.0)
    r = compute_metrics(gt, gt, np.ones_like(gt, bool))
    assert (r.rmse, r.rel, r.mae) == (0, 0, 0)
    assert (r.delta_105, r.delta_110, r.delta_125) == (100, 100, 100)
    r = compute_metrics(1.08 * gt, gt, np.ones_like(gt, bool))
    assert (r.delta_105, r.delta_110, r.delta_125) == (0, 100, 100)
    assert r.rel == pytest.approx(0.08)


def test_metrics_invalid_prediction_conventions():
    gt = np.array([[1.0, 2.0]])
    pred = np.array([[1.0, 0.0]])
    every = compute_metrics(pred, gt, np.ones((1, 2), bool))
    assert every.n_pixels == 2 and every.delta_125 == 50 and every.mae == pytest.approx(1.0)
    skip = compute_metrics(pred, gt, np.ones((1, 2), bool), skip_invalid=True)
    assert skip.n_pixels == 1 and skip.delta_125 == 100 and skip.mae == 0


def test_empty_mask_reports_undefined():
    r = compute_metrics(np.ones((3, 3)), np.ones((3, 3)), np.zeros((3, 3), bool))
    assert r.n_pixels == 0 and not r.defined and math.isnan(r.rmse)
    assert r.to_dict()["rmse"] is None


def test_metrics_match_oracle_4x4():
    rng = np.random.default_rng(44)
    for _ in range(20):
        pred, gt, mask = random_instance(rng, 4, 4)
        for skip in (False, True):
            ref = oracles.metrics(pred, gt, mask, skip)
            got = compute_metrics(pred, gt, mask, skip)
            if ref is None:
                assert got.n_pixels == 0
                continue
            for key, val in ref.items():
                assert getattr(got, key) == pytest.approx(val, rel=1e-12, abs=1e-12)


def test_metric_shape_mismatch():
    with pytest.raises(SizeMismatch):
        compute_metrics(np.ones((2, 2)), np.ones((2, 3)), np.ones((2, 2), bool))


# 0 marks an invalid pixel; valid depths are physical (>= 1 mm), which keeps float underflow out of scaling
maps = arrays(np.float64, (5, 6), elements=st.one_of(st.just(0.0), st.floats(1e-3, 5.0)))


@given(maps, maps, st.floats(0.1, 10))
def test_metric_properties(p, g, s):
    mask = np.ones(p.shape, bool)
    r = compute_metrics(p, g, mask)
    if not r.defined:
        return
    assert r.delta_105 <= r.delta_110 <= r.delta_125
    assert 0 <= r.delta_105 and r.delta_125 <= 100
    scaled = compute_metrics(p * s, g * s, mask)
    assert scaled.rmse == pytest.approx(r.rmse * s, rel=1e-9, abs=1e-12)
    assert scaled.mae == pytest.approx(r.mae * s, rel=1e-9, abs=1e-12)
    assert scaled.rel == pytest.approx(r.rel, rel=1e-9, abs=1e-12)
    perm = np.random.default_rng(0).permutation(p.size)
    shuffled = compute_metrics(p.ravel()[perm].reshape(p.shape), g.ravel()[perm].reshape(p.shape), mask)
    assert shuffled.rmse == pytest.approx(r.rmse, rel=1e-12)
    assert shuffled.delta_110 == r.delta_110


def test_resize_for_eval():
    m = DepthMap(np.random.default_rng(0).uniform(0.5, 2, EVAL_SHAPE))
    assert np.array_equal(resize_for_eval(m).values, m.values)
    const = resize_for_eval(DepthMap(np.full((77, 301), 1.5)))
    assert const.shape == EVAL_SHAPE and np.all(const.values == 1.5)
    checker = np.indices((252, 448)).sum(axis=0) % 2 * 1.0 + 1.0
    out = resize_for_eval(checker)
    assert out.shape == EVAL_SHAPE and set(np.unique(out)) <= {1.0, 2.0}
    mask = resize_for_eval(EvalMask(np.ones((300, 500), bool), Scope.CHALLENGING))
    assert mask.region.shape == EVAL_SHAPE and mask.scope is Scope.CHALLENGING
    # sources are sampled at the pixel containing each target centre
    ramp = np.arange(252 * 448, dtype=float).reshape(252, 448)
    assert resize_for_eval(ramp)[0, 0] == ramp[1, 1]


def test_depthmap_invariants():
    with pytest.raises(ValueError):
        DepthMap(np.array([[100.0]]))
    with pytest.raises(ValueError):
        DepthMap(np.array([[-1.0]]))
    with pytest.raises(ValueError):
        ConfidenceMap(np.array([[1.5]]))


def test_fuse_examples():
    raw = np.array([[2.0, 0.0, 1.0]])
    pred = np.array([[4.0, 3.0, 0.0]])
    assert np.array_equal(fuse_confidence(raw, pred, np.zeros((1, 3))).values, [[2.0, 3.0, 1.0]])
    assert np.array_equal(fuse_confidence(raw, pred, np.ones((1, 3))).values, [[4.0, 3.0, 1.0]])
    assert fuse_confidence(raw, pred, np.full((1, 3), 0.5)).values[0, 0] == 3.0
    with pytest.raises(SizeMismatch):
        fuse_confidence(raw, pred, np.zeros((1, 2)))


@given(arrays(np.float64, (4, 4), elements=st.floats(0.0, 9.0)),
       arrays(np.float64, (4, 4), elements=st.floats(0.0, 9.0)),
       arrays(np.float64, (4, 4), elements=st.floats(0.0, 1.0)))
def test_fuse_bounded(raw, pred, conf):
    out = fuse_confidence(raw, pred, conf).values
    both = (raw > 0) & (pred > 0)
    assert np.all(out[both] >= np.minimum(raw, pred)[both])
    assert np.all(out[both] <= np.maximum(raw, pred)[both])


def test_gradient_examples():
    g, ok = gradient_map(np.full((4, 5), 2.0))
    assert not g.any() and ok.all()
    ramp = np.tile(0.5 + 0.1 * np.arange(6), (3, 1))
    g, ok = gradient_map(ramp)
    assert np.allclose(g[..., 0], 0.1) and np.allclose(g[..., 1], 0)
    lone = np.zeros((3, 3))
    lone[1, 1] = 1.0
    assert not gradient_map(lone)[1].any()


def test_gradient_matches_oracle():
    rng = np.random.default_rng(8)
    for _ in range(20):
        _, d, _ = random_instance(rng, 5, 5, invalid=0.25)
        g, ok = gradient_map(d)
        ref = oracles.gradient(d.tolist())
        for y in range(5):
            for x in range(5):
                for i in range(2):
                    if ref[y][x][i] is None:
                        assert not ok[y, x, i]
                    else:
                        assert ok[y, x, i] and g[y, x, i] == pytest.approx(ref[y][x][i], rel=1e-12, abs=1e-15)


def test_normals_examples():
    k = default_rig(64, 48).intrinsics
    n, ok = normals_from_depth(np.full((48, 64), 1.3), k)
    assert ok.all() and np.allclose(n, (0, 0, -1))
    lone = np.zeros((48, 64))
    lone[10, 10] = 1.0
    assert not normals_from_depth(lone, k)[1].any()


@pytest.mark.parametrize("theta", [10.0, 25.0, 40.0])
def test_tilted_plane_normal(theta):
    k = default_rig(160, 120).intrinsics
    t = math.radians(theta)
    # plane through (0, 0, 1) with normal (0, sin t, -cos t): z = 1 / (cos t - sin t * y_n)
    ys, xs = np.mgrid[0:120, 0:160]
    yn = (ys - k.cy) / k.fy
    depth = 1.0 / (math.cos(t) - math.sin(t) * yn)
    n, ok = normals_from_depth(depth, k)
    cosang = -n[ok][:, 2]
    assert np.degrees(np.arccos(np.clip(cosang, -1, 1))).max() == pytest.approx(theta, abs=0.5)
    assert np.allclose(n[ok], (0, math.sin(t), -math.cos(t)), atol=math.radians(0.5))


def test_normals_agree_with_renderer():
    rig = default_rig(96, 54, look_at((0.0, -0.5, 0.8), (0, 0, 0)))
    depth, gt_n, _, _ = render_gt(plane_scene(WHITE), rig.intrinsics, rig.left_pose, library=[])
    n, ok = normals_from_depth(depth, rig.intrinsics)
    ang = np.degrees(np.arccos(np.clip((n[ok] * gt_n[ok]).sum(-1), -1, 1)))
    assert ang.max() < 0.5


def test_normals_match_oracle():
    rng = np.random.default_rng(12)
    k = (K8.fx, K8.fy, K8.cx, K8.cy)
    for _ in range(15):
        _, d, _ = random_instance(rng, 6, 7, invalid=0.2)
        n, ok = normals_from_depth(d, K8)
        ref = oracles.normals(d.tolist(), *k)
        for y in range(6):
            for x in range(7):
                if ref[y][x] is None:
                    assert not ok[y, x]
                else:
                    assert ok[y, x] and np.allclose(n[y, x], ref[y][x], rtol=1e-9, atol=1e-12)


def test_loss_examples():
    gt = np.full((6, 6), 1.0)
    fg = np.zeros((6, 6), bool)
    total, parts = restoration_loss(gt, gt, gt, fg, K8)
    assert total == 0
    w = LossWeights(w_n=0, w_g=0, w_d=1, fg_boost=1)
    total, parts = restoration_loss(gt + 0.01, gt + 0.01, gt, fg, K8, w)
    assert parts["final"]["total"] == pytest.approx(0.01)
    assert total == pytest.approx(0.02)
    with pytest.raises(ValueError):
        LossWeights(fg_boost=0.5)
    with pytest.raises(ValueError):
        LossWeights(w_n=-1)
    with pytest.raises(SizeMismatch):
        restoration_loss(gt, gt, gt[:5], fg, K8)


def test_loss_matches_oracle_8x8():
    rng = np.random.default_rng(21)
    kk = (K8.fx, K8.fy, K8.cx, K8.cy)
    for _ in range(10):
        pf, gt, _ = random_instance(rng, 8, 8)
        pi = gt * rng.uniform(0.9, 1.1, gt.shape)
        fg = rng.random(gt.shape) < 0.4
        w = LossWeights(*rng.uniform(0.2, 2.0, 5), fg_boost=float(rng.uniform(1, 3)))
        total, _ = restoration_loss(pf, pi, gt, fg, K8, w)
        ref = oracles.restoration_loss(pf.tolist(), pi.tolist(), gt.tolist(), fg.tolist(), kk,
                                       (w.w_final, w.w_initial, w.w_n, w.w_d, w.w_g, w.fg_boost))
        assert total == pytest.approx(ref, rel=1e-9)


@given(arrays(np.float64, (5, 5), elements=st.floats(0.2, 4.0)))
def test_loss_non_negative_and_zero_only_at_gt(gt):
    fg = np.zeros(gt.shape, bool)
    assert restoration_loss(gt, gt, gt, fg, K8)[0] == 0
    off = gt.copy()
    off[2, 2] += 0.1
    assert restoration_loss(off, gt, gt, fg, K8)[0] > 0

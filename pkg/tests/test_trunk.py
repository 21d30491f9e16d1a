import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mxspot import autodiff as ad
from mxspot.evalkit import polygon_iou
from mxspot.trunk import (Trunk, TrunkConfig, propose_regions, rasterize, roi_mask_pool, segmentation_loss,
                          shrink_distance, shrink_polygon, unclip_rectangle)


def _rect(x0, y0, x1, y1):
    return np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]], dtype=float)


def test_square_shrink():
    pts, degenerate = shrink_polygon(_rect(0, 0, 100, 100), 0.5)
    assert not degenerate
    assert shrink_distance(_rect(0, 0, 100, 100), 0.5) == pytest.approx(18.75)
    np.testing.assert_allclose(sorted(set(pts[:, 0])), [18.75, 81.25])
    np.testing.assert_allclose(sorted(set(pts[:, 1])), [18.75, 81.25])


def test_shrink_r_one_is_identity():
    pts, degenerate = shrink_polygon(_rect(0, 0, 30, 10), 1.0 - 1e-12)
    assert not degenerate
    assert polygon_iou(pts, _rect(0, 0, 30, 10)) == pytest.approx(1.0)


def test_thin_rectangle_shrink():
    # independent offset: d = A(1 - r^2) / L, then the rectangle loses 2d per side
    d = 400 * 0.75 / 208
    pts, degenerate = shrink_polygon(_rect(0, 0, 100, 4), 0.5)
    assert not degenerate
    assert shrink_distance(_rect(0, 0, 100, 4), 0.5) == pytest.approx(1.4423, abs=1e-4)
    assert pts[:, 1].max() - pts[:, 1].min() == pytest.approx(4 - 2 * d)


def test_collapse_flagged_degenerate():
    # a bow-tie is invalid, a sliver collapses
    _, degenerate = shrink_polygon(np.array([[0, 0], [10, 10], [10, 0], [0, 10]]), 0.5)
    assert degenerate


@settings(max_examples=60, deadline=None)
@given(st.floats(8, 200), st.floats(4, 60), st.floats(0.2, 0.8))
def test_shrink_unclip_roundtrip_within_two_percent(w, h, r):
    rect = _rect(0, 0, w, h)
    shrunk, degenerate = shrink_polygon(rect, r)
    if degenerate:
        return
    grown = unclip_rectangle(shrunk[:4] if len(shrunk) == 4 else shrunk, r)
    gw = grown[:, 0].max() - grown[:, 0].min()
    gh = grown[:, 1].max() - grown[:, 1].min()
    assert abs(gw - w) <= 0.02 * w and abs(gh - h) <= 0.02 * h


def test_trunk_shapes_and_finite():
    cfg = TrunkConfig(image_size=64, channels=8, widths=(4, 4, 8))
    t = Trunk(np.random.default_rng(0), cfg)
    logits, feats = t(np.zeros((2, 64, 64), np.float32))
    assert logits.shape == (2, 64, 64)
    assert feats.shape == (2, 8, 16, 16)
    assert np.all(np.isfinite(logits.data))
    with pytest.raises(ValueError):
        t(np.zeros((1, 32, 32), np.float32))


def test_trunk_batch_permutation_stable():
    cfg = TrunkConfig(image_size=32, channels=4, widths=(4, 4, 4))
    t = Trunk(np.random.default_rng(0), cfg)
    x = np.random.default_rng(1).random((3, 32, 32)).astype(np.float32)
    a, _ = t(x)
    b, _ = t(x[::-1].copy())
    np.testing.assert_allclose(a.data[::-1], b.data, rtol=1e-5, atol=1e-6)
    np.testing.assert_array_equal(t(x[:1])[0].data, t(x[:1])[0].data)


def test_two_blobs_two_proposals_and_small_dropped():
    seg = np.zeros((64, 64))
    seg[5:15, 5:30] = 0.9
    seg[40:50, 20:50] = 0.8
    seg[60:62, 60:62] = 0.9  # 4 px, below the minimum
    props = propose_regions(seg, TrunkConfig(image_size=64))
    assert len(props) == 2
    assert props[0].confidence == pytest.approx(0.9)
    m = np.stack([p.mask for p in props])
    assert m.sum(axis=0).max() == 1 and all(p.mask.any() for p in props)


@pytest.mark.parametrize("rect", [(10, 20, 110, 50), (30, 30, 200, 60), (50, 100, 90, 180)])
def test_proposal_recovers_shrunk_rectangle(rect):
    cfg = TrunkConfig(image_size=256)
    original = _rect(*rect)
    shrunk, _ = shrink_polygon(original, cfg.shrink_ratio)
    seg = rasterize(shrunk, (256, 256)).astype(float)
    props = propose_regions(seg, cfg)
    assert len(props) == 1
    assert polygon_iou(props[0].polygon, original) >= 0.9


def test_roi_mask_constant_half_plane():
    feats = np.ones((1, 3, 8, 8), np.float32)
    mask = np.zeros((8, 8), bool)
    mask[:, :4] = True
    mf = roi_mask_pool(feats, [0], mask[None], 4)
    assert mf.features.shape == (1, 3, 4, 4)
    inside, outside = mf.features.data[0][:, mf.mask[0]], mf.features.data[0][:, ~mf.mask[0]]
    np.testing.assert_allclose(inside, 1.0)
    assert np.all(outside == 0)


def test_roi_mask_zero_outside_exact():
    rng = np.random.default_rng(0)
    feats = rng.normal(size=(2, 4, 10, 10)).astype(np.float32)
    masks = rng.random((5, 10, 10)) < 0.5
    mf = roi_mask_pool(feats, rng.integers(0, 2, 5), masks, 6)
    assert np.all(mf.features.data.transpose(1, 0, 2, 3)[:, ~mf.mask] == 0)


def test_neighbour_suppression():
    rng = np.random.default_rng(1)
    feats = rng.normal(size=(1, 2, 12, 12))
    a = np.zeros((12, 12), bool)
    a[2:6, 1:6] = True
    b = np.zeros((12, 12), bool)
    b[2:6, 6:11] = True
    before = roi_mask_pool(feats, [0], a[None], 5).features.data
    feats2 = feats.copy()
    feats2[:, :, b] += rng.normal(size=(1, 2, b.sum())) * 100
    np.testing.assert_array_equal(before, roi_mask_pool(feats2, [0], a[None], 5).features.data)


def test_paper_shape():
    feats = np.zeros((1, 256, 64, 64), np.float32)
    m = np.zeros((64, 64), bool)
    m[10:20, 5:50] = True
    assert roi_mask_pool(feats, [0], m[None], 32).features.shape == (1, 256, 32, 32)


def test_empty_mask_rejected():
    with pytest.raises(ValueError):
        roi_mask_pool(np.zeros((1, 1, 4, 4)), [0], np.zeros((1, 4, 4), bool), 4)


def _seg_oracle(p, t, w, eps=1e-7):
    out = []
    for pi, ti, wi in zip(p, t, w):
        pc = np.clip(pi, eps, 1 - eps)
        bce = -(wi * (ti * np.log(pc) + (1 - ti) * np.log(1 - pc))).sum() / max(wi.sum(), 1)
        dice = 1 - (2 * (pi * wi * ti).sum() + 1) / ((pi * wi).sum() + (ti * wi).sum() + 1)
        out.append(bce + dice)
    return np.mean(out)


def test_segmentation_loss_matches_oracle(f64):
    rng = np.random.default_rng(2)
    for _ in range(10):
        p = rng.random((2, 6, 6))
        t = (rng.random((2, 6, 6)) < 0.4).astype(float)
        w = (rng.random((2, 6, 6)) < 0.9).astype(float)
        assert float(segmentation_loss(p, t, w).data) == pytest.approx(_seg_oracle(p, t, w), abs=1e-6)


def test_segmentation_loss_extremes(f64):
    t = (np.random.default_rng(3).random((1, 8, 8)) < 0.5).astype(float)
    perfect = float(segmentation_loss(t, t).data)
    worst = float(segmentation_loss(1 - t, t).data)
    assert perfect < 1e-5
    rng = np.random.default_rng(4)
    for _ in range(20):
        other = (rng.random(t.shape) < 0.5).astype(float)
        assert float(segmentation_loss(other, t).data) <= worst + 1e-12
    with pytest.raises(ValueError):
        segmentation_loss(np.zeros((1, 4, 4)), np.zeros((1, 5, 5)))


def test_segmentation_loss_gradient(f64):
    rng = np.random.default_rng(5)
    for _ in range(20):
        logits = ad.Parameter(rng.normal(size=(2, 5, 5)))
        t = (rng.random((2, 5, 5)) < 0.5).astype(float)
        rep = ad.grad_check(lambda: segmentation_loss(ad.sigmoid(logits), t), [logits])
        assert rep.max_error < 1e-5

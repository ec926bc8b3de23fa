import math
import warnings

import numpy as np
import pytest

from sphdet.criteria import ErpImageSpec, PixelBox, erp_bbox, pixel_weight
from sphdet.detector import (
    Detection,
    EmptyGtError,
    GtAnnotation,
    HeatmapFormatError,
    HeatmapTensor,
    LossWeights,
    decode,
    focal_loss,
    fov_loss,
    gt_offset,
    heatmap_value,
    load_heatmap,
    offset_loss,
    planar_to_spherical,
    radius,
    render_gt,
    save_heatmap,
    total_loss,
)
from sphdet.geometry import DegenerateRectError, SphericalRect, iou, sph_to_vec

TWO_PI = 2.0 * math.pi


def _area(a, b):
    return 4.0 * math.acos(max(-1.0, min(1.0, -math.sin(a / 2) * math.sin(b / 2)))) - TWO_PI


def _bisect(f, lo, hi, iters=100):
    # f(lo) > 0 > f(hi), monotone decreasing
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if f(mid) > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# ground-truth offset


def test_gt_offset_example():
    spec = ErpImageSpec(256, 128)
    (x, y), (dt, dp) = gt_offset(10.5 * TWO_PI / 256, 64.25 * math.pi / 128, spec)
    assert (x, y) == (10, 64)
    assert dt == pytest.approx(math.pi / 256, abs=1e-15)
    assert dp == pytest.approx(0.25 * math.pi / 128, abs=1e-15)


def test_gt_offset_cell_boundary_is_zero():
    spec = ErpImageSpec(256, 128)
    (x, y), (dt, dp) = gt_offset(10 * TWO_PI / 256, 64 * math.pi / 128, spec)
    assert (x, y) == (10, 64)
    assert dt == 0.0 and dp == 0.0


def test_gt_offset_reconstruction(rng):
    spec = ErpImageSpec(256, 128)
    for _ in range(200):
        th = rng.uniform(0.0, TWO_PI)
        ph = rng.uniform(0.0, math.pi)
        (x, y), (dt, dp) = gt_offset(th, ph, spec)
        assert 0 <= x < 256 and 0 <= y < 128
        assert 0.0 <= dt < spec.px_theta and 0.0 <= dp < spec.px_phi
        assert x * spec.px_theta + dt == pytest.approx(th, abs=1e-12)
        assert y * spec.px_phi + dp == pytest.approx(ph, abs=1e-12)


def test_gt_offset_south_pole_clamps():
    spec = ErpImageSpec(64, 32)
    (x, y), (dt, dp) = gt_offset(0.0, math.pi, spec)
    assert y == 31
    assert 0.0 <= dp < spec.px_phi


def test_gt_offset_validates_phi():
    with pytest.raises(ValueError):
        gt_offset(0.0, math.pi + 0.01, ErpImageSpec(64, 32))


# ---------------------------------------------------------------------------
# splat radius


def test_radius_frozen_values():
    # frozen from the closed forms after cross-checking against bisection
    rb = radius(0.5, 0.5, 0.7)
    assert rb.gamma_a == pytest.approx(0.05009196112923847, rel=1e-12)
    assert rb.gamma_b == pytest.approx(0.04146586825570861, rel=1e-12)
    assert rb.valid_a and rb.valid_b and not rb.valid_c
    assert rb.gamma_c < 0  # reported as printed even though excluded
    assert rb.gamma == rb.gamma_b
    assert not rb.used_fallback

    rb = radius(0.2, 1.4, 0.7)
    assert rb.gamma_a == pytest.approx(0.03703390504834614, rel=1e-12)
    assert rb.gamma_b == pytest.approx(0.027629644239995588, rel=1e-12)

    rb = radius(1.0, 0.8, 0.7)
    assert rb.gamma_a == pytest.approx(0.09366610954338145, rel=1e-12)
    assert rb.gamma_b == pytest.approx(0.07584670504008834, rel=1e-12)


def test_radius_third_case_can_win():
    # at (1.4, 1.4) the intersection-case value is finite and smallest
    rb = radius(1.4, 1.4, 0.7)
    assert rb.valid_a and rb.valid_b and rb.valid_c
    assert rb.gamma_c == pytest.approx(0.07736364605914825, rel=1e-12)
    assert rb.gamma == rb.gamma_c


def test_radius_matches_bisection_oracle():
    t = 0.7
    for a in (0.2, 0.5, 0.8, 1.1, 1.4):
        for b in (0.2, 0.5, 0.8, 1.1, 1.4):
            rb = radius(a, b, t)
            want_a = _bisect(
                lambda g: _area(a, b) / _area(a + 2 * g, b + 2 * g) - t,
                0.0,
                0.5 * (math.pi - max(a, b)),
            )
            want_b = _bisect(
                lambda g: _area(a - 2 * g, b - 2 * g) / _area(a, b) - t,
                0.0,
                0.5 * min(a, b) * (1 - 1e-12),
            )
            assert rb.gamma_a == pytest.approx(want_a, abs=1e-6)
            assert rb.gamma_b == pytest.approx(want_b, abs=1e-6)
            assert not rb.used_fallback
            for g, ok in ((rb.gamma_a, rb.valid_a), (rb.gamma_b, rb.valid_b), (rb.gamma_c, rb.valid_c)):
                if ok:
                    assert rb.gamma <= g + 1e-15


def test_radius_relation_via_library_iou():
    # the inflated concentric rect contains the original, so their IoU is
    # the defining area ratio; the deflated one mirrors it
    t = 0.7
    for a, b in ((0.5, 0.5), (0.3, 1.2), (1.0, 0.8)):
        rb = radius(a, b, t)
        base = SphericalRect(1.0, 1.2, a, b)
        grown = SphericalRect(1.0, 1.2, a + 2 * rb.gamma_a, b + 2 * rb.gamma_a)
        shrunk = SphericalRect(1.0, 1.2, a - 2 * rb.gamma_b, b - 2 * rb.gamma_b)
        assert iou(base, grown) == pytest.approx(t, abs=1e-6)
        assert iou(shrunk, base) == pytest.approx(t, abs=1e-6)


def test_radius_threshold_one_is_zero():
    for a, b in ((0.2, 0.2), (0.5, 1.0), (1.4, 0.7)):
        rb = radius(a, b, 1.0)
        assert rb.gamma == pytest.approx(0.0, abs=1e-9)
        assert rb.valid_a and rb.valid_b
        assert not rb.used_fallback


def test_radius_validates_inputs():
    with pytest.raises(ValueError):
        radius(0.0, 0.5, 0.7)
    with pytest.raises(ValueError):
        radius(0.5, 0.5, 0.0)
    with pytest.raises(ValueError):
        radius(0.5, 0.5, 1.5)


# ---------------------------------------------------------------------------
# heatmap values


def test_heatmap_value_at_center_is_one():
    assert heatmap_value((1.0, 1.0), (1.0, 1.0), 0.1) == 1.0
    assert heatmap_value((1.0, 1.0), (1.0, 1.0), 0.1, mode="squared") == 1.0


def test_heatmap_value_antipodal():
    v = heatmap_value((0.0, 0.5), (math.pi, math.pi - 0.5), 1.0)
    assert v == pytest.approx(math.exp(-math.pi / 2), rel=1e-12)


def test_heatmap_value_squared_mode():
    # location 0.5 rad away along the equator, sigma 1
    v = heatmap_value((0.0, math.pi / 2), (0.5, math.pi / 2), 1.0, mode="squared")
    assert v == pytest.approx(math.exp(-0.125), rel=1e-12)


def test_heatmap_value_monotone_in_distance():
    vals = [heatmap_value((0.0, math.pi / 2), (d, math.pi / 2), 0.3) for d in (0.05, 0.1, 0.2, 0.4)]
    assert all(a > b for a, b in zip(vals, vals[1:]))


def test_heatmap_value_validates():
    with pytest.raises(ValueError):
        heatmap_value((0, 1), (0, 1), 0.0)
    with pytest.raises(ValueError):
        heatmap_value((0, 1), (0, 1), 1.0, mode="gauss")


# ---------------------------------------------------------------------------
# ground-truth rendering


def _brute_scores(annotations, spec, num_classes, t=0.7, sigma_scale=1.0 / 3.0):
    # independent per-cell evaluation of the splat definition
    scores = np.zeros((spec.height, spec.width, num_classes))
    for ann in annotations:
        g = radius(ann.bbox.alpha, ann.bbox.beta, t).gamma
        sigma = g * sigma_scale
        cvec = sph_to_vec(ann.bbox.theta, ann.bbox.phi)
        for y in range(spec.height):
            for x in range(spec.width):
                p = sph_to_vec(x * TWO_PI / spec.width, y * math.pi / spec.height)
                d = math.acos(max(-1.0, min(1.0, float(np.dot(p, cvec)))))
                if d <= g and sigma > 0:
                    v = math.exp(-d / (2 * sigma * sigma))
                    scores[y, x, ann.class_id] = max(scores[y, x, ann.class_id], v)
    for ann in annotations:
        (x, y), _ = gt_offset(ann.bbox.theta, ann.bbox.phi, spec)
        scores[y, x, ann.class_id] = 1.0
    return scores


def test_render_gt_single_annotation():
    spec = ErpImageSpec(64, 32)
    ann = GtAnnotation(1, SphericalRect(1.0, math.pi / 2, 0.8, 0.6))
    t = render_gt([ann], spec, num_classes=3)
    assert t.scores.shape == (32, 64, 3)
    (x, y), off = gt_offset(1.0, math.pi / 2, spec)
    assert t.scores[y, x, 1] == 1.0
    assert (t.scores[:, :, 1] == 1.0).sum() == 1
    assert t.scores[:, :, 0].max() == 0.0 and t.scores[:, :, 2].max() == 0.0
    assert tuple(t.offsets[y, x]) == off
    assert tuple(t.fovs[y, x]) == (0.8, 0.6)
    # offsets live only at the positive cell
    other = np.delete(t.offsets.reshape(-1, 2), y * 64 + x, axis=0)
    assert not other.any()


def test_render_gt_matches_brute_force():
    # grid fine enough that the seam splat spans columns on both sides
    spec = ErpImageSpec(128, 64)
    anns = [
        GtAnnotation(0, SphericalRect(0.01, math.pi / 2, 0.9, 0.7)),  # straddles the seam
        GtAnnotation(1, SphericalRect(2.0, 0.4, 0.8, 0.8)),
        GtAnnotation(0, SphericalRect(2.2, 1.8, 1.0, 0.5)),  # overlaps class 0 splat region
    ]
    got = render_gt(anns, spec, num_classes=2)
    want = _brute_scores(anns, spec, 2)
    assert np.allclose(got.scores, want, atol=1e-12)
    # seam annotation reaches columns on the far side of theta = 0
    assert got.scores[:, -1, 0].max() > 0.0


def test_render_gt_idempotent_for_duplicates():
    spec = ErpImageSpec(64, 32)
    ann = GtAnnotation(0, SphericalRect(1.5, 1.0, 0.7, 0.7))
    one = render_gt([ann], spec, 1)
    two = render_gt([ann, ann], spec, 1)
    assert np.array_equal(one.scores, two.scores)
    assert np.array_equal(one.offsets, two.offsets)
    assert np.array_equal(one.fovs, two.fovs)


def test_render_gt_squared_mode_differs():
    spec = ErpImageSpec(256, 128)
    ann = GtAnnotation(0, SphericalRect(1.0, math.pi / 2, 1.2, 1.0))
    d = render_gt([ann], spec, 1, mode="distance")
    s = render_gt([ann], spec, 1, mode="squared")
    assert s.mode == "squared"
    neg = (d.scores > 0) & (d.scores < 1)
    assert neg.any()
    assert not np.allclose(d.scores[neg], s.scores[neg])


def test_render_gt_validates():
    spec = ErpImageSpec(64, 32)
    ann = GtAnnotation(3, SphericalRect(1.0, 1.0, 0.5, 0.5))
    with pytest.raises(ValueError, match="class_id"):
        render_gt([ann], spec, num_classes=2)
    with pytest.raises(ValueError):
        render_gt([], spec, num_classes=0)


# ---------------------------------------------------------------------------
# losses


def test_focal_loss_perfect_prediction_is_zero():
    spec = ErpImageSpec(64, 32)
    ann = GtAnnotation(0, SphericalRect(1.0, math.pi / 2, 0.8, 0.6))
    gt = render_gt([ann], spec, 1)
    assert focal_loss(gt.scores, gt.scores, spec) == pytest.approx(0.0, abs=1e-9)


def test_focal_loss_matches_hand_evaluation():
    spec = ErpImageSpec(8, 4)
    gt = np.zeros((4, 8, 1))
    gt[1, 2, 0] = 1.0
    gt[1, 1, 0] = 0.7
    gt[2, 2, 0] = 0.3
    pred = np.full((4, 8, 1), 0.05)
    pred[1, 2, 0] = 0.9
    pred[2, 0, 0] = 0.6

    total = 0.0
    for y in range(4):
        for x in range(8):
            w = pixel_weight(y, spec)
            p = min(max(pred[y, x, 0], 1e-12), 1 - 1e-12)
            yv = gt[y, x, 0]
            if yv == 1.0:
                total += w * (1 - p) ** 2 * math.log(p)
            else:
                total += w * (1 - yv) ** 4 * p**2 * math.log(1 - p)
    want = -total / 1
    assert focal_loss(pred, gt, spec) == pytest.approx(want, rel=1e-12)


def test_focal_loss_weighs_equator_over_pole():
    spec = ErpImageSpec(8, 4)
    gt = np.zeros((4, 8, 1))
    gt[0, 0, 0] = 1.0
    base = np.zeros((4, 8, 1))
    near_pole = base.copy()
    near_pole[0, 4, 0] = 0.5  # false positive in a polar row
    near_equator = base.copy()
    near_equator[2, 4, 0] = 0.5  # same mistake at the equator
    assert focal_loss(near_equator, gt, spec) > focal_loss(near_pole, gt, spec)


def test_focal_loss_requires_positives():
    spec = ErpImageSpec(8, 4)
    with pytest.raises(EmptyGtError):
        focal_loss(np.zeros((4, 8, 1)), np.zeros((4, 8, 1)), spec)
    with pytest.raises(ValueError):
        focal_loss(np.zeros((4, 8, 1)), np.zeros((4, 8, 2)), spec)


def test_offset_loss_zero_for_exact_prediction():
    spec = ErpImageSpec(64, 32)
    anns = [
        GtAnnotation(0, SphericalRect(1.0, 1.2, 0.5, 0.5)),
        GtAnnotation(0, SphericalRect(4.0, 2.0, 0.7, 0.4)),
    ]
    gt = render_gt(anns, spec, 1)
    assert offset_loss(gt.offsets, anns, spec) == pytest.approx(0.0, abs=1e-12)


def test_offset_loss_matches_vector_oracle(rng):
    spec = ErpImageSpec(64, 32)
    for _ in range(20):
        th = rng.uniform(0, TWO_PI)
        ph = rng.uniform(0.3, math.pi - 0.3)
        ann = GtAnnotation(0, SphericalRect(th, ph, 0.5, 0.5))
        pred = np.zeros((32, 64, 2))
        (x, y), _ = gt_offset(th, ph, spec)
        dt = rng.uniform(0, spec.px_theta)
        dp = rng.uniform(0, spec.px_phi)
        pred[y, x] = (dt, dp)
        v1 = sph_to_vec(x * spec.px_theta + dt, y * spec.px_phi + dp)
        v2 = sph_to_vec(th, ph)
        want = math.acos(max(-1.0, min(1.0, float(np.dot(v1, v2)))))
        assert offset_loss(pred, [ann], spec) == pytest.approx(want, abs=1e-12)


def test_offset_loss_azimuth_error_cheaper_near_pole():
    spec = ErpImageSpec(64, 32)
    # same azimuthal offset error, one object near the pole, one at the equator
    for_phi = {}
    for phi in (0.15, math.pi / 2):
        th = 12 * spec.px_theta + 0.02
        ann = GtAnnotation(0, SphericalRect(th, phi, 0.5, 0.5))
        pred = np.zeros((32, 64, 2))
        (x, y), (dt, dp) = gt_offset(th, phi, spec)
        pred[y, x] = (dt + 0.05, dp)
        for_phi[phi] = offset_loss(pred, [ann], spec)
    assert for_phi[0.15] < for_phi[math.pi / 2]


def test_offset_loss_requires_annotations():
    with pytest.raises(EmptyGtError):
        offset_loss(np.zeros((32, 64, 2)), [], ErpImageSpec(64, 32))


def test_fov_loss_values():
    spec = ErpImageSpec(64, 32)
    ann = GtAnnotation(0, SphericalRect(1.0, 1.2, 0.5, 0.8))
    gt = render_gt([ann], spec, 1)
    assert fov_loss(gt.fovs, [ann], spec) == 0.0
    bumped = gt.fovs.copy()
    (x, y), _ = gt_offset(1.0, 1.2, spec)
    bumped[y, x, 0] += 0.1
    assert fov_loss(bumped, [ann], spec) == pytest.approx(0.1, abs=1e-12)
    swapped = gt.fovs.copy()
    swapped[y, x, 1] += 0.1
    assert fov_loss(swapped, [ann], spec) == pytest.approx(0.1, abs=1e-12)
    with pytest.raises(EmptyGtError):
        fov_loss(gt.fovs, [], spec)


def test_total_loss_weighting():
    assert total_loss(0.0, 0.0, 0.0, LossWeights()) == 0.0
    assert total_loss(1.0, 1.0, 1.0, LossWeights()) == pytest.approx(71.0)
    assert total_loss(1.0, 1.0, 1.0, LossWeights(lambda_off=1.0, lambda_fov=0.1)) == pytest.approx(2.1)


def test_loss_weights_validate():
    with pytest.raises(ValueError):
        LossWeights(lambda_off=0.0)
    with pytest.raises(ValueError):
        LossWeights(iou_threshold=0.0)
    with pytest.raises(ValueError):
        LossWeights(iou_threshold=1.2)


def test_losses_invariant_under_seam_shift():
    spec = ErpImageSpec(64, 32)
    anns = [
        GtAnnotation(0, SphericalRect(12.37 * spec.px_theta, 1.1, 0.6, 0.5)),
        GtAnnotation(1, SphericalRect(60.21 * spec.px_theta, 1.9, 0.8, 0.7)),
    ]
    # imperfect predictions: rendered from jittered annotations
    jittered = [
        GtAnnotation(0, SphericalRect(12.80 * spec.px_theta, 1.13, 0.65, 0.52)),
        GtAnnotation(1, SphericalRect(60.55 * spec.px_theta, 1.87, 0.74, 0.72)),
    ]
    gt = render_gt(anns, spec, 2)
    pred = render_gt(jittered, spec, 2)
    base = (
        focal_loss(pred.scores, gt.scores, spec),
        offset_loss(pred.offsets, anns, spec),
        fov_loss(pred.fovs, anns, spec),
    )
    for k in (5, 17, 33):
        dt = k * spec.px_theta
        shifted = [
            GtAnnotation(a.class_id, SphericalRect((a.bbox.theta + dt) % TWO_PI, a.bbox.phi, a.bbox.alpha, a.bbox.beta))
            for a in anns
        ]
        gt_s = render_gt(shifted, spec, 2)
        rolled = (
            np.roll(pred.scores, k, axis=1),
            np.roll(pred.offsets, k, axis=1),
            np.roll(pred.fovs, k, axis=1),
        )
        assert focal_loss(rolled[0], gt_s.scores, spec) == pytest.approx(base[0], abs=1e-9)
        assert offset_loss(rolled[1], shifted, spec) == pytest.approx(base[1], abs=1e-9)
        assert fov_loss(rolled[2], shifted, spec) == pytest.approx(base[2], abs=1e-9)


# ---------------------------------------------------------------------------
# decoding


def test_decode_uniform_has_no_peaks():
    spec = ErpImageSpec(16, 8)
    t = HeatmapTensor(np.full((8, 16, 1), 0.5), np.zeros((8, 16, 2)), np.zeros((8, 16, 2)), spec)
    assert decode(t) == []


def test_decode_known_peak_position():
    spec = ErpImageSpec(256, 128)
    scores = np.zeros((128, 256, 1))
    scores[32, 64, 0] = 0.9
    fovs = np.zeros((128, 256, 2))
    fovs[32, 64] = (0.5, 0.4)
    t = HeatmapTensor(scores, np.zeros((128, 256, 2)), fovs, spec)
    dets = decode(t)
    assert len(dets) == 1
    d = dets[0]
    assert d.class_id == 0 and d.score == 0.9
    assert d.bbox.theta == pytest.approx(math.pi / 2, abs=1e-12)
    assert d.bbox.phi == pytest.approx(math.pi / 4, abs=1e-12)
    assert d.bbox.as_tuple()[2:] == (0.5, 0.4)


def test_decode_seam_peak():
    # peak at column 0 with larger values at W-1 must not be a peak; the
    # wrap has to see them
    spec = ErpImageSpec(16, 8)
    scores = np.zeros((8, 16, 1))
    scores[4, 0, 0] = 0.5
    scores[4, 15, 0] = 0.6
    t = HeatmapTensor(scores, np.zeros((8, 16, 2)), np.zeros((8, 16, 2)), spec)
    dets = decode(t)
    assert len(dets) == 1
    assert dets[0].score == 0.6


def test_decode_top_k_and_order():
    spec = ErpImageSpec(32, 16)
    scores = np.zeros((16, 32, 2))
    peaks = [(4, 4, 0, 0.9), (4, 12, 1, 0.7), (10, 20, 0, 0.8), (12, 28, 1, 0.6)]
    for y, x, c, v in peaks:
        scores[y, x, c] = v
    t = HeatmapTensor(scores, np.zeros((16, 32, 2)), np.ones((16, 32, 2)) * 0.5, spec)
    dets = decode(t, top_k=3)
    assert [d.score for d in dets] == [0.9, 0.8, 0.7]
    dets_all = decode(t, top_k=100)
    assert len(dets_all) == 4
    with pytest.raises(ValueError):
        decode(t, top_k=0)


def test_encode_decode_round_trip(rng):
    spec = ErpImageSpec(256, 128)
    for _ in range(20):
        th = rng.uniform(0, TWO_PI)
        ph = rng.uniform(0.4, math.pi - 0.4)
        al, be = rng.uniform(0.2, 1.2), rng.uniform(0.2, 1.2)
        cls = int(rng.integers(0, 3))
        ann = GtAnnotation(cls, SphericalRect(th, ph, al, be))
        dets = decode(render_gt([ann], spec, 3))
        assert len(dets) >= 1
        d = dets[0]
        assert d.class_id == cls
        assert d.score == 1.0
        assert d.bbox.as_tuple()[2:] == (al, be)
        dth = abs(d.bbox.theta - th)
        assert min(dth, TWO_PI - dth) < 1e-9  # cell + offset reconstructs exactly
        assert abs(d.bbox.phi - ph) < 1e-9


def test_decode_two_separated_objects():
    spec = ErpImageSpec(256, 128)
    anns = [
        GtAnnotation(0, SphericalRect(1.0, 1.2, 0.5, 0.5)),
        GtAnnotation(2, SphericalRect(4.0, 1.8, 0.8, 0.6)),
    ]
    dets = decode(render_gt(anns, spec, 3))
    exact = [d for d in dets if d.score == 1.0]
    assert len(exact) == 2
    assert {d.class_id for d in exact} == {0, 2}


# ---------------------------------------------------------------------------
# planar -> spherical conversion


def test_planar_to_spherical_equator_rect_exact():
    spec = ErpImageSpec(512, 256)
    # symmetric about row 128 = the equator
    b = planar_to_spherical(PixelBox(100.0, 118.0, 160.0, 138.0), spec)
    assert b.theta == pytest.approx(130.0 * spec.px_theta, abs=1e-12)
    assert b.phi == pytest.approx(math.pi / 2, abs=1e-12)
    assert b.alpha == pytest.approx(60.0 * spec.px_theta, abs=1e-12)
    assert b.beta == pytest.approx(20.0 * spec.px_phi, abs=1e-12)


def test_planar_to_spherical_round_trip_quality(rng):
    # frozen sweep: at 2048x1024 the reconstruction keeps IoU >= 0.8 for
    # mid-latitude rects (worst observed 0.90; pixel rounding is the
    # dominant error for small fovs)
    spec = ErpImageSpec(2048, 1024)
    for _ in range(100):
        b0 = SphericalRect(
            rng.uniform(0, TWO_PI),
            math.pi / 2 + rng.uniform(-0.5, 0.5),
            rng.uniform(0.05, 1.0),
            rng.uniform(0.05, 1.0),
        )
        box = erp_bbox(b0, spec)
        b1 = planar_to_spherical(box, spec)
        assert iou(b0, b1) >= 0.8
        # the rect's own bbox must cover the input box (within a pixel)
        box1 = erp_bbox(b1, spec)
        dx0 = (box1.x0 - box.x0) % spec.width
        if dx0 > spec.width / 2:
            dx0 -= spec.width
        assert dx0 <= 1.0
        assert box.width - dx0 <= box1.width + 1.0
        assert box1.y0 <= box.y0 + 1.0
        assert box1.y1 >= box.y1 - 1.0


def test_planar_to_spherical_hemisphere_top_row_exact():
    spec = ErpImageSpec(512, 256)
    box = PixelBox(40.0, 30.0, 90.0, 80.0)  # entirely northern
    b = planar_to_spherical(box, spec)
    assert b.phi - 0.5 * b.beta == pytest.approx(30.0 * spec.px_phi, abs=1e-12)
    out = erp_bbox(b, spec)
    assert out.y0 == 30.0


def test_planar_to_spherical_south_mirrors_north():
    spec = ErpImageSpec(512, 256)
    north = planar_to_spherical(PixelBox(40.0, 30.0, 90.0, 80.0), spec)
    south = planar_to_spherical(PixelBox(40.0, 176.0, 90.0, 226.0), spec)
    assert south.phi == pytest.approx(math.pi - north.phi, abs=1e-12)
    assert south.alpha == pytest.approx(north.alpha, abs=1e-12)
    assert south.beta == pytest.approx(north.beta, abs=1e-12)


def test_planar_to_spherical_full_width_band():
    spec = ErpImageSpec(512, 256)
    with pytest.warns(UserWarning, match="alpha capped"):
        b = planar_to_spherical(PixelBox(0.0, 100.0, 512.0, 156.0), spec)
    assert b.alpha == math.pi


def test_planar_to_spherical_pole_touch_insets():
    spec = ErpImageSpec(512, 256)
    with pytest.warns(UserWarning, match="north pole"):
        b = planar_to_spherical(PixelBox(40.0, 0.0, 90.0, 60.0), spec)
    assert b.phi - 0.5 * b.beta == pytest.approx(0.5 * spec.px_phi, abs=1e-12)


def test_planar_to_spherical_rejects_zero_area():
    spec = ErpImageSpec(512, 256)
    with pytest.raises(DegenerateRectError):
        planar_to_spherical(PixelBox(40.0, 30.0, 40.0, 80.0), spec)


def test_planar_to_spherical_wrapped_box():
    spec = ErpImageSpec(512, 256)
    b = planar_to_spherical(PixelBox(500.0, 120.0, 536.0, 136.0), spec)
    ref = planar_to_spherical(PixelBox(200.0, 120.0, 236.0, 136.0), spec)
    dth = (b.theta - ref.theta) % TWO_PI
    assert dth == pytest.approx(300.0 * spec.px_theta, abs=1e-9)
    assert b.alpha == pytest.approx(ref.alpha, abs=1e-12)


# ---------------------------------------------------------------------------
# binary container


def test_heatmap_container_round_trip(tmp_path):
    spec = ErpImageSpec(64, 32)
    anns = [GtAnnotation(0, SphericalRect(1.0, 1.2, 0.5, 0.5)), GtAnnotation(1, SphericalRect(4.0, 1.8, 0.8, 0.6))]
    for mode in ("distance", "squared"):
        t = render_gt(anns, spec, 2, mode=mode)
        path = tmp_path / f"hm_{mode}.sphm"
        save_heatmap(t, path)
        back = load_heatmap(path)
        assert back.mode == mode
        assert back.spec == spec
        assert np.array_equal(back.scores, t.scores)
        assert np.array_equal(back.offsets, t.offsets)
        assert np.array_equal(back.fovs, t.fovs)


def test_heatmap_container_layout(tmp_path):
    spec = ErpImageSpec(4, 2)
    scores = np.arange(16, dtype=float).reshape(2, 4, 2) / 16.0
    t = HeatmapTensor(scores, np.zeros((2, 4, 2)), np.zeros((2, 4, 2)), spec)
    path = tmp_path / "layout.sphm"
    save_heatmap(t, path)
    blob = path.read_bytes()
    assert blob[:4] == b"SPHM"
    import struct

    W, H, C, flags = struct.unpack_from("<IIII", blob, 4)
    assert (W, H, C, flags) == (4, 2, 2, 0)
    plane0 = np.frombuffer(blob, dtype="<f8", count=8, offset=20).reshape(2, 4)
    assert np.array_equal(plane0, scores[:, :, 0])


def test_heatmap_container_rejects_garbage(tmp_path):
    good = tmp_path / "good.sphm"
    save_heatmap(
        HeatmapTensor(
            np.zeros((2, 4, 1)), np.zeros((2, 4, 2)), np.zeros((2, 4, 2)), ErpImageSpec(4, 2)
        ),
        good,
    )
    blob = good.read_bytes()

    bad_magic = tmp_path / "bad_magic.sphm"
    bad_magic.write_bytes(b"XXXX" + blob[4:])
    with pytest.raises(HeatmapFormatError, match="magic"):
        load_heatmap(bad_magic)

    truncated = tmp_path / "trunc.sphm"
    truncated.write_bytes(blob[:-8])
    with pytest.raises(HeatmapFormatError, match="size"):
        load_heatmap(truncated)

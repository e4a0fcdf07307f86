"""Refinement-head tests.

Heatmap accumulation and the RoI crop are checked against independent literal
implementations; the losses against hand-evaluated closed forms; the analytic
gradients against central differences; training against a separable synthetic
set with a held-out split.
"""

import math

import numpy as np
import pytest
from scipy.special import expit

from fusedet.camera import Box2D, CameraModel
from fusedet.detector import Detection2D
from fusedet.dsp import RadarPoint
from fusedet.errors import ConfigError, DataError, DegenerateBoxError, TrainingError
from fusedet.fusion import (
    FusionParams,
    GridConfig,
    RadarHeatmap,
    TrainHyper,
    TrainingSample,
    bce_loss,
    build_radar_heatmap,
    crop_roi,
    focal_loss,
    init_fusion_params,
    integrate,
    load_fusion_params_yaml,
    loss_gradients,
    perceptual_fuse,
    refine,
    save_fusion_params_yaml,
    select_samples,
    total_loss,
    train_refinement,
)


def simple_camera() -> CameraModel:
    """Pinhole with focal 100, principal point (64, 64), depth along world z."""
    return CameraModel(
        intrinsic=np.array([[100.0, 0.0, 64.0], [0.0, 100.0, 64.0], [0.0, 0.0, 1.0]]),
        radial=(0.0, 0.0),
        tangential=(0.0, 0.0),
        image_size=(128, 128),
        extrinsic=np.array([[1.0, 0, 0, 0], [0, 1.0, 0, 0], [0, 0, 1.0, 0]]),
    )


def heatmap_from(channels: np.ndarray, cell_size: int = 32) -> RadarHeatmap:
    h, w, _ = channels.shape
    return RadarHeatmap(
        channels=channels,
        raw=channels.copy(),
        bounds=np.zeros((3, 2)),
        cell_size=cell_size,
        image_size=(h * cell_size, w * cell_size),
    )


def oracle_bilinear(channels, cell_size, box, n=7):
    """Independent scalar bilinear sampler used as the crop oracle."""
    h, w, c = channels.shape
    out = np.zeros((n, n, c))
    for i in range(n):
        for j in range(n):
            v = box.v_min + (i + 0.5) / n * (box.v_max - box.v_min)
            u = box.u_min + (j + 0.5) / n * (box.u_max - box.u_min)
            gy = min(max(v / cell_size - 0.5, 0.0), h - 1.0)
            gx = min(max(u / cell_size - 0.5, 0.0), w - 1.0)
            y0, x0 = int(math.floor(gy)), int(math.floor(gx))
            y1, x1 = min(y0 + 1, h - 1), min(x0 + 1, w - 1)
            fy, fx = gy - y0, gx - x0
            for k in range(c):
                out[i, j, k] = (
                    channels[y0, x0, k] * (1 - fy) * (1 - fx)
                    + channels[y0, x1, k] * (1 - fy) * fx
                    + channels[y1, x0, k] * fy * (1 - fx)
                    + channels[y1, x1, k] * fy * fx
                )
    return out


class TestHeatmap:
    def test_accumulates_counts_and_means(self):
        cam = simple_camera()
        grid = GridConfig(cell_size=32, image_size=(128, 128))
        # both project near the principal point, same cell (2, 2)
        points = [RadarPoint(0.0, 0.0, 5.0, 1.0), RadarPoint(0.01, 0.0, 7.0, 3.0)]
        hm = build_radar_heatmap(points, cam, grid)
        assert hm.raw[2, 2, 0] == 2
        assert hm.raw[2, 2, 1] == pytest.approx(6.0)
        assert hm.raw[2, 2, 2] == pytest.approx(2.0)
        assert hm.raw[..., 0].sum() == 2

    def test_normalization_and_empty_cells(self):
        cam = simple_camera()
        grid = GridConfig(cell_size=32, image_size=(128, 128))
        points = [
            RadarPoint(0.0, 0.0, 5.0, 2.0),        # cell (2, 2)
            RadarPoint(-1.6, 0.0, 5.0, 4.0),       # u = 32, cell (2, 1)
            RadarPoint(-1.59, 0.0, 5.0, 4.0),      # same cell (2, 1)
        ]
        hm = build_radar_heatmap(points, cam, grid)
        # count channel: max 2, min 0 -> occupied cells at 0.5 and 1.0
        assert hm.channels[2, 2, 0] == pytest.approx(0.5)
        assert hm.channels[2, 1, 0] == pytest.approx(1.0)
        # velocity min/max over all cells is (0, 4): means 2 and 4 normalize
        # to 0.5 and 1.0, and empty cells are forced back to zero
        assert hm.channels[2, 2, 2] == pytest.approx(0.5)
        assert hm.channels[2, 1, 2] == pytest.approx(1.0)
        empty = hm.raw[..., 0] == 0
        assert np.all(hm.channels[empty] == 0.0)
        assert tuple(hm.bounds[0]) == (0.0, 2.0)

    def test_empty_pointcloud_gives_zero_map(self):
        hm = build_radar_heatmap([], simple_camera(),
                                 GridConfig(32, (128, 128)))
        assert np.all(hm.channels == 0.0)
        assert np.all(hm.raw == 0.0)

    def test_point_outside_image_skipped(self):
        cam = simple_camera()
        points = [RadarPoint(10.0, 0.0, 5.0, 1.0)]  # u = 64 + 200, off image
        hm = build_radar_heatmap(points, cam, GridConfig(32, (128, 128)))
        assert hm.raw[..., 0].sum() == 0

    def test_point_behind_camera_skipped(self):
        cam = simple_camera()
        points = [RadarPoint(0.0, 0.0, -5.0, 1.0)]
        hm = build_radar_heatmap(points, cam, GridConfig(32, (128, 128)))
        assert hm.raw[..., 0].sum() == 0

    def test_grid_shape_rounds_up(self):
        grid = GridConfig(cell_size=32, image_size=(100, 70))
        assert grid.shape == (4, 3)


class TestCropRoi:
    def test_matches_oracle_on_random_fields(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            channels = rng.uniform(0.0, 1.0, size=(5, 6, 3))
            hm = heatmap_from(channels)
            u0, v0 = rng.uniform(0, 150, size=2)
            du, dv = rng.uniform(5, 40, size=2)
            box = Box2D(u0, v0, u0 + du, v0 + dv).clamped(hm.image_size)
            if box.area() <= 0:
                continue
            roi = crop_roi(hm, box)
            expected = oracle_bilinear(channels, 32, box)
            assert np.allclose(roi, expected, atol=1e-12)

    def test_constant_field_crops_constant(self):
        hm = heatmap_from(np.full((4, 4, 3), 0.37))
        roi = crop_roi(hm, Box2D(10, 20, 90, 110))
        assert np.allclose(roi, 0.37)

    def test_roi_shape(self):
        hm = heatmap_from(np.zeros((4, 4, 3)))
        assert crop_roi(hm, Box2D(0, 0, 128, 128)).shape == (7, 7, 3)

    def test_zero_area_box_raises(self):
        hm = heatmap_from(np.zeros((4, 4, 3)))
        with pytest.raises(DegenerateBoxError):
            crop_roi(hm, Box2D(10, 10, 10, 40))

    def test_box_outside_image_raises(self):
        hm = heatmap_from(np.zeros((4, 4, 3)))
        with pytest.raises(DegenerateBoxError):
            crop_roi(hm, Box2D(500, 500, 600, 600))


class TestFuseAndIntegrate:
    def test_zero_radar_params_reduce_to_image_confidence(self):
        params = FusionParams(radar_w=np.zeros(3), radar_b=0.0)
        roi = np.zeros((7, 7, 3))
        for conf in (0.1, 0.3, 0.5, 0.9, 0.99):
            assert perceptual_fuse(conf, roi, params) == pytest.approx(conf, abs=1e-9)

    def test_radar_evidence_raises_confidence(self):
        params = FusionParams()  # default: w = (60, 0, 0), b = -2
        cold = np.zeros((7, 7, 3))
        hot = np.zeros((7, 7, 3))
        hot[..., 0] = 1.0
        assert perceptual_fuse(0.5, hot, params) > perceptual_fuse(0.5, cold, params)
        assert perceptual_fuse(0.5, hot, params) > 0.99
        assert perceptual_fuse(0.5, cold, params) == pytest.approx(expit(-2.0))

    def test_out_of_range_confidence_rejected(self):
        with pytest.raises(DataError):
            perceptual_fuse(1.5, np.zeros((7, 7, 3)), FusionParams())

    def test_zero_network_is_neutral(self):
        params = FusionParams()
        assert integrate([0.1, 0.9], [0.5, 0.5], params) == pytest.approx(0.5)

    def test_hand_computed_forward(self):
        params = FusionParams(
            w1=np.array([[1.0, -1.0, 0.5, 0.5], [0.0, 2.0, -1.0, 1.0]]),
            b1=np.array([0.1, -0.2]),
            w2=np.array([1.0, -2.0]),
            b2=0.3,
        )
        v1, v2 = [0.2, 0.8], [0.4, 0.6]
        z1 = np.array([0.2 - 0.8 + 0.2 + 0.3 + 0.1, 1.6 - 0.4 + 0.6 - 0.2])
        a1 = np.maximum(z1, 0)
        expected = expit(1.0 * a1[0] - 2.0 * a1[1] + 0.3)
        assert integrate(v1, v2, params) == pytest.approx(expected, abs=1e-12)

    def test_dimension_mismatch_raises(self):
        with pytest.raises(DataError):
            integrate([0.5, 0.5, 0.0], [0.5, 0.5, 0.0], FusionParams())
        with pytest.raises(DataError):
            integrate([0.5, 0.5], [0.5], FusionParams())


class TestLosses:
    def test_focal_spot_value(self):
        # [DERIVED] alpha (1-p)^gamma -log(p) at p=0.5: 0.25 * 0.25 * ln 2
        assert focal_loss(0.5, 1, alpha=0.25, gamma=2.0) == pytest.approx(
            math.log(2.0) / 16.0, abs=1e-9
        )
        assert focal_loss(0.5, 1) == pytest.approx(0.0433216987849966, abs=1e-9)

    def test_focal_negative_branch(self):
        # [DERIVED] (1-alpha) p^gamma -log(1-p) at p=0.8, alpha=0.25, gamma=2
        expected = 0.75 * 0.64 * -math.log(0.2)
        assert focal_loss(0.8, 0) == pytest.approx(expected, abs=1e-9)

    def test_bce_spot_values(self):
        assert bce_loss(0.5, 1) == pytest.approx(math.log(2.0), abs=1e-9)
        assert bce_loss(0.5, 1) == pytest.approx(0.6931471805599453, abs=1e-9)
        # the printed form has no negative branch
        assert bce_loss(0.2, 0) == 0.0
        assert bce_loss(0.2, 0, symmetric=True) == pytest.approx(-math.log(0.8))

    def test_neutral_sample_total(self):
        # [DERIVED] all-zero head on a neutral sample: p = q = 0.5,
        # loss = focal(0.5, 1) + 1.0 * bce(0.5, 1) = ln2/16 + ln2
        params = FusionParams(radar_w=np.zeros(3), radar_b=0.0)
        sample = TrainingSample(
            scores=np.array([0.5, 0.5]),
            pooled=np.zeros(3),
            image_logit=0.0,
            is_image=True,
            label=1,
        )
        assert total_loss([sample], params) == pytest.approx(0.7364688793449419,
                                                             abs=1e-9)

    def test_clamped_extremes_stay_finite(self):
        assert math.isfinite(focal_loss(0.0, 1))
        assert math.isfinite(focal_loss(1.0, 0))
        assert math.isfinite(bce_loss(0.0, 1))
        assert math.isfinite(bce_loss(1.0, 0, symmetric=True))

    def test_total_decomposes_term_by_term(self):
        # recompute every sample's q and p by hand and sum the printed terms
        rng = np.random.default_rng(3)
        params = FusionParams(
            radar_w=rng.normal(0, 0.5, 3), radar_b=0.4,
            w1=rng.normal(0, 0.5, (8, 4)), b1=rng.normal(0, 0.2, 8),
            w2=rng.normal(0, 0.5, 8), b2=-0.1, lam=0.7,
        )
        samples = []
        expected = 0.0
        for _ in range(12):
            s = rng.uniform(0.1, 0.9)
            is_image = bool(rng.integers(0, 2))
            y = int(rng.integers(0, 2))
            sample = TrainingSample(
                scores=np.array([1 - s, s]),
                pooled=rng.uniform(0, 1, 3),
                image_logit=math.log(s / (1 - s)) if is_image else 0.0,
                is_image=is_image,
                label=y,
            )
            samples.append(sample)
            q = float(expit(sample.image_logit
                            + params.radar_w @ sample.pooled + params.radar_b))
            term = 0.7 * bce_loss(q, y)
            if is_image:
                p = integrate(sample.scores, [1 - q, q], params)
                term += focal_loss(p, y, params.alpha, params.gamma)
            expected += term
        assert total_loss(samples, params) == pytest.approx(expected, abs=1e-9)

    def test_all_radar_batch_with_zero_lambda(self):
        params = FusionParams(lam=0.0)
        samples = [
            TrainingSample(np.array([0.5, 0.5]), np.full(3, 0.4), 0.0, False, y)
            for y in (0, 1, 1)
        ]
        assert total_loss(samples, params) == 0.0

    def test_empty_batch_raises(self):
        with pytest.raises(TrainingError):
            total_loss([], FusionParams())


class TestSelectSamples:
    def test_bands(self):
        truth = [Box2D(0, 0, 100, 100)]
        cands = [
            Box2D(0, 0, 100, 100),    # IoU 1.0 -> positive
            Box2D(5, 5, 105, 105),    # high overlap -> positive
            Box2D(0, 0, 50, 50),      # IoU 0.25 -> negative
            Box2D(200, 200, 300, 300),  # disjoint -> negative
            Box2D(0, 0, 100, 50),     # IoU 0.5 -> neither
        ]
        pos, neg = select_samples(cands, truth)
        assert pos == [0, 1]
        assert neg == [2, 3]

    def test_one_third_iou_is_excluded(self):
        # equal squares overlapping half their area: IoU = 1/3, inside (0.3, 0.7)
        truth = [Box2D(0, 0, 100, 100)]
        cand = Box2D(50, 0, 150, 100)
        assert truth[0].iou(cand) == pytest.approx(1.0 / 3.0)
        pos, neg = select_samples([cand], truth)
        assert pos == [] and neg == []

    def test_no_truth_makes_everything_negative(self):
        pos, neg = select_samples([Box2D(0, 0, 10, 10)], [])
        assert pos == [] and neg == [0]


def _flatten(params):
    return np.concatenate([
        params.radar_w, [params.radar_b], params.w1.ravel(), params.b1,
        params.w2, [params.b2],
    ])


def _unflatten(vec, like):
    h, d = like.w1.shape
    i = 0
    radar_w = vec[i:i + 3]; i += 3
    radar_b = float(vec[i]); i += 1
    w1 = vec[i:i + h * d].reshape(h, d); i += h * d
    b1 = vec[i:i + h]; i += h
    w2 = vec[i:i + h]; i += h
    b2 = float(vec[i])
    return FusionParams(radar_w=radar_w, radar_b=radar_b, w1=w1, b1=b1,
                        w2=w2, b2=b2, lam=like.lam, alpha=like.alpha,
                        gamma=like.gamma)


def _random_batch(rng, n=6):
    out = []
    for _ in range(n):
        s = rng.uniform(0.05, 0.95)
        is_image = bool(rng.integers(0, 2))
        out.append(TrainingSample(
            scores=np.array([1 - s, s]),
            pooled=rng.uniform(0, 1, size=3),
            image_logit=float(np.log(s / (1 - s))) if is_image else 0.0,
            is_image=is_image,
            label=int(rng.integers(0, 2)),
        ))
    return out


class TestGradients:
    def test_matches_central_differences(self):
        # [DERIVED] 10 random parameter points, h = 1e-5; the analytic
        # backward pass must agree with central differences to 1e-4 relative
        h = 1e-5
        for seed in range(10):
            rng = np.random.default_rng(seed)
            samples = _random_batch(rng)
            params = FusionParams(
                radar_w=rng.normal(0, 0.5, 3), radar_b=float(rng.normal(0, 0.5)),
                w1=rng.normal(0, 0.5, (4, 4)), b1=rng.normal(0, 0.3, 4),
                w2=rng.normal(0, 0.5, 4), b2=float(rng.normal(0, 0.3)),
            )
            loss, grads = loss_gradients(samples, params)
            assert loss == pytest.approx(total_loss(samples, params), abs=1e-12)
            analytic = np.concatenate([
                grads["radar_w"], [grads["radar_b"]], grads["w1"].ravel(),
                grads["b1"], grads["w2"], [grads["b2"]],
            ])
            vec = _flatten(params)
            numeric = np.zeros_like(vec)
            for k in range(vec.size):
                up, dn = vec.copy(), vec.copy()
                up[k] += h
                dn[k] -= h
                numeric[k] = (
                    total_loss(samples, _unflatten(up, params))
                    - total_loss(samples, _unflatten(dn, params))
                ) / (2 * h)
            rel = np.abs(analytic - numeric) / np.maximum.reduce(
                [np.abs(analytic), np.abs(numeric), np.full_like(vec, 1e-6)]
            )
            assert rel.max() < 1e-4

    def test_symmetric_bce_gradients(self):
        h = 1e-5
        rng = np.random.default_rng(99)
        samples = _random_batch(rng)
        params = FusionParams(
            radar_w=rng.normal(0, 0.5, 3), radar_b=0.2,
            w1=rng.normal(0, 0.5, (4, 4)), b1=rng.normal(0, 0.3, 4),
            w2=rng.normal(0, 0.5, 4), b2=0.1,
        )
        _, grads = loss_gradients(samples, params, symmetric_bce=True)
        vec = _flatten(params)
        analytic = np.concatenate([
            grads["radar_w"], [grads["radar_b"]], grads["w1"].ravel(),
            grads["b1"], grads["w2"], [grads["b2"]],
        ])
        for k in range(vec.size):
            up, dn = vec.copy(), vec.copy()
            up[k] += h
            dn[k] -= h
            numeric = (
                total_loss(samples, _unflatten(up, params), symmetric_bce=True)
                - total_loss(samples, _unflatten(dn, params), symmetric_bce=True)
            ) / (2 * h)
            denom = max(abs(analytic[k]), abs(numeric), 1e-6)
            assert abs(analytic[k] - numeric) / denom < 1e-4


def separable_set(seed=42, n=200):
    """Consistent pairs labeled keep, contradictory pairs labeled drop."""
    rng = np.random.default_rng(seed)
    samples = []
    for _ in range(n):
        if rng.integers(0, 2):
            conf = rng.uniform(0.75, 0.95)
            count = rng.uniform(0.6, 1.0)
            label = 1
        else:
            if rng.integers(0, 2):
                conf = rng.uniform(0.75, 0.95)
                count = rng.uniform(0.0, 0.05)
            else:
                conf = rng.uniform(0.05, 0.25)
                count = rng.uniform(0.6, 1.0)
            label = 0
        pooled = np.array([count, rng.uniform(0, 1), rng.uniform(0, 1)])
        samples.append(TrainingSample(
            scores=np.array([1 - conf, conf]),
            pooled=pooled,
            image_logit=float(np.log(conf / (1 - conf))),
            is_image=True,
            label=label,
        ))
    return samples[:160], samples[160:]


def head_probability(params, sample):
    q = float(expit(sample.image_logit
                    + params.radar_w @ sample.pooled + params.radar_b))
    return integrate(sample.scores, [1 - q, q], params)


class TestTraining:
    def test_learns_separable_set(self):
        # [DERIVED] training experiment: consistent vs contradictory pairs,
        # held-out accuracy of the keep decision must reach 0.95
        train, held = separable_set()
        hyper = TrainHyper(lr=0.2, epochs=200, batch_size=32, seed=0,
                           symmetric_bce=True)
        start = init_fusion_params(hyper)
        start_loss = total_loss(train, start, symmetric_bce=True)
        trained = train_refinement(train, hyper)
        end_loss = total_loss(train, trained, symmetric_bce=True)
        assert end_loss < 0.5 * start_loss
        correct = sum(
            (head_probability(trained, s) >= 0.5) == bool(s.label) for s in held
        )
        assert correct / len(held) >= 0.95

    def test_deterministic_given_seed(self):
        train, _ = separable_set()
        hyper = TrainHyper(lr=0.1, epochs=5, batch_size=16, seed=11)
        a = train_refinement(train, hyper)
        b = train_refinement(train, hyper)
        assert np.array_equal(a.radar_w, b.radar_w)
        assert np.array_equal(a.w1, b.w1)
        assert np.array_equal(a.w2, b.w2)
        assert a.radar_b == b.radar_b and a.b2 == b.b2

    def test_zero_learning_rate_returns_initial(self):
        train, _ = separable_set()
        initial = FusionParams()
        hyper = TrainHyper(lr=0.0, epochs=3, seed=0)
        out = train_refinement(train, hyper, initial=initial)
        assert np.array_equal(out.radar_w, initial.radar_w)
        assert np.array_equal(out.w1, initial.w1)
        assert out.radar_b == initial.radar_b

    def test_never_worse_than_initial(self):
        train, _ = separable_set()
        hyper = TrainHyper(lr=5.0, epochs=8, seed=2)  # deliberately too hot
        initial = init_fusion_params(hyper)
        out = train_refinement(train, hyper, initial=initial)
        assert total_loss(train, out) <= total_loss(train, initial) + 1e-12

    def test_single_class_batch_rejected(self):
        ones = [TrainingSample(np.array([0.2, 0.8]), np.zeros(3), 1.0, True, 1)]
        with pytest.raises(TrainingError):
            train_refinement(ones, TrainHyper())

    def test_initial_params_respected(self):
        train, _ = separable_set()
        initial = FusionParams(radar_w=np.array([7.0, 0.0, 0.0]), radar_b=-1.0)
        hyper = TrainHyper(lr=0.0, epochs=1, seed=0)
        out = train_refinement(train, hyper, initial=initial)
        assert out.radar_w[0] == 7.0


def hot_cold_heatmap():
    """4x4 grid, count channel lit only in cell (1, 1) (pixels 32..64)."""
    channels = np.zeros((4, 4, 3))
    channels[1, 1, 0] = 1.0
    return heatmap_from(channels)


def image_candidate(conf, box):
    return Detection2D(box=box, scores=np.array([1 - conf, conf]), source="image")


def radar_candidate(box):
    return Detection2D(box=box, scores=np.array([0.5, 0.5]), source="radar")


HOT_BOX = Box2D(40, 40, 56, 56)
COLD_BOX = Box2D(96, 96, 120, 120)


class TestRefine:
    def test_image_candidate_on_radar_evidence_kept(self):
        out = refine([image_candidate(0.6, HOT_BOX)], hot_cold_heatmap(),
                     FusionParams())
        assert len(out) == 1
        assert out[0].provenance == "image"
        assert out[0].q > 0.99

    def test_weak_image_candidate_without_radar_rejected(self):
        # q = sigmoid(logit(0.6) - 2) ~ 0.17 < 0.5
        out = refine([image_candidate(0.6, COLD_BOX)], hot_cold_heatmap(),
                     FusionParams())
        assert out == []

    def test_confident_image_candidate_survives_radar_absence(self):
        # q = sigmoid(logit(0.9) - 2) ~ 0.55 >= 0.5
        out = refine([image_candidate(0.9, COLD_BOX)], hot_cold_heatmap(),
                     FusionParams())
        assert len(out) == 1
        assert 0.5 <= out[0].q < 0.6

    def test_radar_candidate_kept_on_hot_cell(self):
        out = refine([radar_candidate(HOT_BOX)], hot_cold_heatmap(),
                     FusionParams())
        assert len(out) == 1
        assert out[0].provenance == "radar"
        assert out[0].keep_score == pytest.approx(out[0].q)

    def test_radar_candidate_rejected_on_cold_cell(self):
        out = refine([radar_candidate(COLD_BOX)], hot_cold_heatmap(),
                     FusionParams())
        assert out == []

    def test_image_only_mode_ignores_radar(self):
        # same weak candidate as above now survives: q reduces to 0.6
        out = refine([image_candidate(0.6, COLD_BOX)], hot_cold_heatmap(),
                     FusionParams(), mode="image-only")
        assert len(out) == 1
        assert out[0].q == pytest.approx(0.6, abs=1e-9)

    def test_nms_suppresses_heavy_overlap(self):
        cands = [image_candidate(0.7, Box2D(40, 40, 56, 56)),
                 image_candidate(0.9, Box2D(42, 40, 58, 56))]
        out = refine(cands, hot_cold_heatmap(), FusionParams())
        assert len(out) == 1
        assert out[0].q >= 0.99  # the higher-confidence box won

    def test_nms_boundary_iou_not_suppressed(self):
        # inner box has exactly half the union: IoU = 0.5, not > 0.5
        a, b = Box2D(40, 40, 56, 56), Box2D(40, 40, 48, 56)
        assert a.iou(b) == pytest.approx(0.5)
        out = refine([image_candidate(0.9, a), image_candidate(0.8, b)],
                     hot_cold_heatmap(), FusionParams())
        assert len(out) == 2

    def test_zero_area_candidate_skipped(self):
        off_image = image_candidate(0.9, Box2D(500, 500, 600, 600))
        out = refine([off_image], hot_cold_heatmap(), FusionParams())
        assert out == []

    def test_unknown_mode_rejected(self):
        with pytest.raises(ConfigError):
            refine([], hot_cold_heatmap(), FusionParams(), mode="hybrid")

    def test_identity_defaults_to_unassigned(self):
        out = refine([radar_candidate(HOT_BOX)], hot_cold_heatmap(),
                     FusionParams())
        assert out[0].identity == -1


class TestParamsIo:
    def test_yaml_round_trip(self, tmp_path):
        rng = np.random.default_rng(5)
        params = FusionParams(
            radar_w=rng.normal(0, 1, 3), radar_b=0.25,
            w1=rng.normal(0, 1, (8, 4)), b1=rng.normal(0, 1, 8),
            w2=rng.normal(0, 1, 8), b2=-0.5, lam=0.8, alpha=0.3, gamma=1.5,
        )
        path = tmp_path / "params.yaml"
        save_fusion_params_yaml(path, params)
        loaded = load_fusion_params_yaml(path)
        assert np.array_equal(loaded.radar_w, params.radar_w)
        assert np.array_equal(loaded.w1, params.w1)
        assert np.array_equal(loaded.b1, params.b1)
        assert np.array_equal(loaded.w2, params.w2)
        assert loaded.radar_b == params.radar_b
        assert loaded.b2 == params.b2
        assert (loaded.lam, loaded.alpha, loaded.gamma) == (0.8, 0.3, 1.5)

    def test_missing_field_reports_name(self, tmp_path):
        path = tmp_path / "broken.yaml"
        save_fusion_params_yaml(path, FusionParams())
        import yaml as _yaml
        with open(path) as fh:
            doc = _yaml.safe_load(fh)
        del doc["radar_w"]
        with open(path, "w") as fh:
            _yaml.safe_dump(doc, fh)
        with pytest.raises(ConfigError, match="radar_w"):
            load_fusion_params_yaml(path)

    def test_shape_validation(self):
        with pytest.raises(ConfigError):
            FusionParams(radar_w=np.zeros(2))
        with pytest.raises(ConfigError):
            FusionParams(b1=np.zeros(3))  # default hidden width is 8
        with pytest.raises(ConfigError):
            FusionParams(radar_b=float("nan"))

    def test_default_init_deterministic(self):
        a = init_fusion_params(TrainHyper(seed=4))
        b = init_fusion_params(TrainHyper(seed=4))
        assert np.array_equal(a.w1, b.w1)
        assert np.array_equal(a.radar_w, b.radar_w)

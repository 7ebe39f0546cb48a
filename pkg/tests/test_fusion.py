import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import brute_force_edt
from viewstitch.errors import InvalidHomographyError, UnsupportedPoseError, ViewStitchError
from viewstitch.evaluation import project_sparse_reference, sparse_psnr
from viewstitch.fusion import (
    FusionConfig,
    WarpedView,
    blend,
    compute_fusion_weights,
    distance_weight,
    gradient_weight,
    warp_perspective,
)
from viewstitch.geometry import CameraModel, Homography
from viewstitch.pipeline import FavsConfig, FeatureStore, favs_synthesize
from viewstitch.synth import sample_view_points


def _const_view(value, shape=(20, 30), **kw):
    img = np.full(shape + (3,), value, np.uint8)
    return WarpedView(img, np.ones(shape, bool), **kw)


class TestWarp:
    def test_identity_is_bit_exact(self, textured_image):
        v = warp_perspective(textured_image, Homography.identity(), 200, 160)
        assert np.array_equal(v.image, textured_image)
        assert v.coverage.all()

    def test_translation(self, textured_image):
        v = warp_perspective(textured_image, Homography.translation(10, 0), 200, 160)
        assert np.array_equal(v.image[:, 10:], textured_image[:, :-10])
        assert not v.coverage[:, :10].any() and v.coverage[:, 10:].all()
        assert not v.image[:, :10].any()

    def test_grayscale_promoted(self):
        v = warp_perspective(np.full((8, 8), 7, np.uint8), Homography.identity(), 8, 8)
        assert v.image.shape == (8, 8, 3) and (v.image == 7).all()

    def test_invalid_homography_raises(self, textured_image):
        with pytest.raises(InvalidHomographyError):
            warp_perspective(textured_image, Homography(np.diag([-1.0, 1.0, 1.0])), 200, 160)

    def test_coverage_shape_invariant(self):
        with pytest.raises(ValueError):
            WarpedView(np.zeros((4, 4, 3), np.uint8), np.ones((4, 5), bool))


class TestDistanceWeight:
    def test_centre_of_full_frame_is_one(self):
        w = distance_weight(np.ones((19, 19), bool), 2.0)
        assert w[9, 9] == 1.0
        # border pixel sits at d=1 against d_max=10
        assert w[0, 9] == pytest.approx(0.01)

    def test_empty_mask(self):
        assert not distance_weight(np.zeros((5, 5), bool), 2.0).any()

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_brute_force(self, seed):
        rng = np.random.default_rng(seed)
        mask = rng.random((64, 64)) < rng.uniform(0.5, 0.95)
        d = brute_force_edt(mask)
        expected = np.where(mask, (d / d.max()) ** 2, 0.0)
        assert np.allclose(distance_weight(mask, 2.0), expected, atol=1e-6)

    @given(st.integers(0, 2**31 - 1))
    @settings(max_examples=30, deadline=None)
    def test_growing_coverage_never_lowers_distance(self, seed):
        rng = np.random.default_rng(seed)
        small = rng.random((24, 24)) < 0.6
        big = small | (rng.random((24, 24)) < 0.3)
        assert np.all(brute_force_edt(big) >= brute_force_edt(small))


class TestGradientWeight:
    def test_constant_image(self):
        assert np.array_equal(gradient_weight(np.full((9, 9, 3), 80, np.uint8), 50.0), np.ones((9, 9)))

    def test_step_edge(self):
        img = np.zeros((10, 10, 3), np.uint8)
        img[:, 5:] = 100
        w = gradient_weight(img, 50.0)
        assert w[4, 4] == pytest.approx(0.5) and w[4, 5] == pytest.approx(0.5)
        assert w[4, 0] == 1.0

    def test_rejects_bad_sigma(self):
        with pytest.raises(ValueError):
            gradient_weight(np.zeros((3, 3)), 0.0)


class TestFusionWeights:
    def test_factor_isolation(self):
        v = _const_view(90, is_primary=True)
        (w,) = compute_fusion_weights([v])
        assert np.allclose(w, 1.5 * distance_weight(v.coverage, 2.0))

    def test_quality_zero(self):
        (w,) = compute_fusion_weights([_const_view(90, quality=0.0)])
        assert not w.any()

    def test_primary_ratio(self):
        a, b = _const_view(90, is_primary=True), _const_view(90)
        wa, wb = compute_fusion_weights([a, b])
        assert np.allclose(wa, 1.5 * wb)

    def test_zero_outside_coverage(self, textured_image):
        v = warp_perspective(textured_image, Homography.translation(10, 0), 200, 160)
        (w,) = compute_fusion_weights([v])
        assert (w >= 0).all() and not w[~v.coverage].any()

    @pytest.mark.parametrize("kw", [dict(gamma=0.0), dict(sigma=-1.0), dict(primary_bonus=0.5)])
    def test_config_invariants(self, kw):
        with pytest.raises(ValueError):
            FusionConfig(**kw)


class TestBlend:
    def test_single_view(self, textured_image):
        v = warp_perspective(textured_image, Homography.translation(10, 0), 200, 160)
        res = blend([v], compute_fusion_weights([v]))
        inner = res.total_weight > 0
        assert np.array_equal(res.image[inner], v.image[inner])
        assert not res.image[res.hole_mask].any()

    @pytest.mark.parametrize("weights,expected", [((1.0, 1.0), 150), ((1.0, 3.0), 175)])
    def test_weighted_mean(self, weights, expected):
        views = [_const_view(100), _const_view(200)]
        res = blend(views, [np.full((20, 30), w) for w in weights])
        assert (res.image == expected).all() and res.coverage == 1.0

    def test_empty_raises(self):
        with pytest.raises(ViewStitchError):
            blend([], [])

    def test_hole_mask_complements_coverage(self):
        v = _const_view(50)
        w = np.ones((20, 30))
        w[:, :4] = 0
        res = blend([v], [w])
        assert res.hole_mask[:, :4].all() and not res.hole_mask[:, 4:].any()

    @given(st.floats(1e-3, 1e3))
    @settings(max_examples=20, deadline=None)
    def test_weight_scale_invariance(self, scale):
        rng = np.random.default_rng(1)
        views = [WarpedView(rng.integers(0, 256, (12, 12, 3), dtype=np.uint8), np.ones((12, 12), bool))
                 for _ in range(3)]
        ws = [rng.uniform(0.1, 1, (12, 12)) for _ in range(3)]
        a = blend(views, ws).image
        b = blend(views, [w * scale for w in ws]).image
        assert np.abs(a.astype(int) - b).max() <= 1

    @pytest.mark.parametrize("k", [1, 2, 4])
    def test_partition_of_unity(self, textured_image, k):
        v = warp_perspective(textured_image, Homography.translation(3, 2), 200, 160)
        views = [WarpedView(v.image, v.coverage, quality=0.2 + 0.2 * i, is_primary=i == 0) for i in range(k)]
        res = blend(views, compute_fusion_weights(views))
        covered = ~res.hole_mask
        assert np.abs(res.image[covered].astype(int) - v.image[covered]).max() <= 1


class TestPipeline:
    def _psnr(self, env, target, image):
        cloud = sample_view_points(env, [target], 20000, 11)
        return sparse_psnr(project_sparse_reference(cloud, target), image)

    def test_target_at_front_camera(self, small_env, small_rig, small_frame):
        front = small_rig[0]
        target = CameraModel("target", front.intrinsics, front.pose, front.width, front.height)
        res = favs_synthesize(small_rig, small_frame.images, target, FavsConfig())
        assert self._psnr(small_env, target, res.image) >= 25.0
        assert res.coverage == 1.0

    def test_geometric_only(self, small_rig, small_frame):
        target = small_rig[0].with_pose(small_rig[1].pose, "t")
        res = favs_synthesize(small_rig, small_frame.images, target, FavsConfig(geometric_only=True))
        used = [s for s in res.per_source if s["valid"]]
        assert used and all(s["provenance"] == "geometric" and s["alpha"] == 1.0 for s in used)

    def test_unsupported_pose(self, small_rig, small_frame):
        # a camera looking straight down sees none of the ring frames
        down = CameraModel.from_angles("down", 50, 160, 120, 0.0, -np.pi / 2, width=320, height=240)
        with pytest.raises(UnsupportedPoseError, match="target pose unsupported"):
            favs_synthesize(small_rig[:1], small_frame.images, down)

    def test_deterministic_and_cached(self, tmp_path, small_rig, small_frame):
        front = small_rig[0]
        target = CameraModel.from_angles("t", front.intrinsics.f, 160, 120, np.deg2rad(27.5), 0.0,
                                         front.pose.translation, 320, 240)
        cams = small_rig[:3]
        a = favs_synthesize(cams, small_frame.images, target, FavsConfig(), FeatureStore(tmp_path))
        assert list(tmp_path.glob("*.vskp"))
        b = favs_synthesize(cams, small_frame.images, target, FavsConfig(), FeatureStore(tmp_path))
        c = favs_synthesize(cams, small_frame.images, target, FavsConfig())
        assert np.array_equal(a.image, b.image) and np.array_equal(a.image, c.image)
        assert a.per_source == b.per_source

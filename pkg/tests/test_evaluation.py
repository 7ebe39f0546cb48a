import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import dense_ssim_skimage
from viewstitch.errors import InsufficientCoverageError, NoReferenceError, ShapeMismatchError
from viewstitch.evaluation import (
    PSNR_CAP_DB,
    ColoredPointCloud,
    SparseReference,
    SsimProtocol,
    colorize_point_cloud,
    dense_psnr,
    dense_rmse,
    evaluate,
    interior_mask,
    project_sparse_reference,
    restrict,
    sparse_mae,
    sparse_psnr,
    sparse_rmse,
    sparse_ssim,
    to_luma,
)
from viewstitch.geometry import CameraModel
from viewstitch.synth import default_rig


def dense_reference(image: np.ndarray) -> SparseReference:
    h, w = image.shape[:2]
    v, u = np.mgrid[0:h, 0:w]
    pix = np.stack([u.ravel(), v.ravel()], axis=1)
    return SparseReference(pix, image.reshape(-1, 3).copy(), np.ones(h * w), w, h)


def random_reference(rng, n=400, w=40, h=30) -> SparseReference:
    flat = rng.choice(w * h, n, replace=False)
    pix = np.stack([flat % w, flat // w], axis=1)
    return SparseReference(pix, rng.integers(0, 256, (n, 3), dtype=np.uint8), rng.uniform(1, 9, n), w, h)


class TestColorize:
    def test_axis_point_gets_camera_colour(self):
        rig = default_rig()
        images = [np.zeros((480, 640, 3), np.uint8) for _ in rig]
        images[0][...] = (255, 0, 0)
        front = rig[0]
        point = front.pose.translation + 10.0 * front.pose.optical_axis
        cloud = colorize_point_cloud(point[None], rig, images)
        assert len(cloud) == 1
        assert cloud.rgb[0].tolist() == [255, 0, 0] and cloud.source == ["front"]

    def test_point_behind_every_camera(self):
        cam = default_rig()[0]
        behind = cam.pose.translation - 10.0 * cam.pose.optical_axis
        cloud = colorize_point_cloud(behind[None], [cam], [np.zeros((480, 640, 3), np.uint8)])
        assert len(cloud) == 0

    def test_occluded_point_dropped(self):
        cam = default_rig()[0]
        ray = cam.pose.optical_axis
        pts = np.stack([cam.pose.translation + 5.0 * ray, cam.pose.translation + 10.0 * ray])
        cloud = colorize_point_cloud(pts, [cam], [np.full((480, 640, 3), 9, np.uint8)])
        assert len(cloud) == 1 and np.allclose(cloud.xyz[0], pts[0])

    def test_most_head_on_camera_wins(self):
        rig = default_rig()
        # 30 degrees right lies inside both the front and front_right frames, nearer the latter's axis
        d = np.array([np.sin(np.deg2rad(30)), -np.cos(np.deg2rad(30)), 0.0])
        images = [np.full((480, 640, 3), 10 * i, np.uint8) for i in range(len(rig))]
        cloud = colorize_point_cloud(100.0 * d[None], rig, images)
        assert cloud.source == ["front_right"] and cloud.rgb[0, 0] == 10

    def test_cloud_invariants(self):
        with pytest.raises(ShapeMismatchError):
            ColoredPointCloud(np.zeros((2, 3)), np.zeros((3, 3)))


class TestProjection:
    def test_hand_pinhole(self):
        cam = CameraModel.from_angles("t", 500.0, 320.0, 240.0, 0.0, 0.0)
        # world (x right, y back, z down) -> camera (1, -2, 10): u = 320 + 50, v = 240 - 100
        cloud = ColoredPointCloud([[1.0, -10.0, -2.0]], [[1, 2, 3]])
        ref = project_sparse_reference(cloud, cam)
        assert ref.pixels.tolist() == [[370, 140]]
        assert ref.depth[0] == pytest.approx(10.0)

    def test_nearest_depth_wins(self):
        cam = CameraModel.from_angles("t", 500.0, 320.0, 240.0, 0.0, 0.0)
        cloud = ColoredPointCloud([[0.0, -6.0, 0.0], [0.0, -4.0, 0.0]], [[60, 60, 60], [40, 40, 40]])
        ref = project_sparse_reference(cloud, cam)
        assert len(ref) == 1 and ref.rgb[0, 0] == 40 and ref.depth[0] == pytest.approx(4.0)

    def test_out_of_frame_and_behind_dropped(self):
        cam = CameraModel.from_angles("t", 500.0, 320.0, 240.0, 0.0, 0.0)
        cloud = ColoredPointCloud([[0.0, 5.0, 0.0], [100.0, -1.0, 0.0]], [[1, 1, 1], [2, 2, 2]])
        assert len(project_sparse_reference(cloud, cam)) == 0

    def test_empty(self):
        cam = CameraModel.from_angles("t", 500.0, 320.0, 240.0, 0.0, 0.0)
        ref = project_sparse_reference(ColoredPointCloud(np.zeros((0, 3)), np.zeros((0, 3))), cam)
        assert len(ref) == 0 and ref.coverage == 0.0


class TestMetrics:
    def test_perfect_image(self, textured_image):
        m = evaluate(textured_image, dense_reference(textured_image))
        assert (m.psnr, m.ssim, m.mae, m.rmse) == (PSNR_CAP_DB, pytest.approx(1.0), 0.0, 0.0)
        assert m.coverage == 1.0

    def test_uniform_offset(self, textured_image):
        img = np.clip(textured_image.astype(int), 0, 245).astype(np.uint8)
        ref = dense_reference(img)
        shifted = img + 10
        assert sparse_mae(ref, shifted) == 10.0 and sparse_rmse(ref, shifted) == 10.0
        assert sparse_psnr(ref, shifted) == pytest.approx(28.131, abs=5e-4)
        assert sparse_psnr(ref, shifted) == pytest.approx(20 * np.log10(25.5), abs=1e-12)

    def test_dense_equivalence(self, rng, textured_image):
        other = np.clip(textured_image + rng.normal(0, 12, textured_image.shape), 0, 255).astype(np.uint8)
        ref = dense_reference(textured_image)
        diff = other.astype(float) - textured_image
        assert abs(sparse_psnr(ref, other) - dense_psnr(other, textured_image)) <= 1e-9
        assert abs(sparse_rmse(ref, other) - dense_rmse(other, textured_image)) <= 1e-9
        assert abs(sparse_mae(ref, other) - np.abs(diff).mean()) <= 1e-9
        dense = dense_ssim_skimage(to_luma(textured_image), to_luma(other))
        assert abs(sparse_ssim(ref, other) - dense) <= 1e-6

    def test_inverted_texture(self, textured_image):
        ref = dense_reference(textured_image)
        assert sparse_ssim(ref, 255 - textured_image) < 0.2

    def test_empty_reference(self):
        ref = SparseReference(np.zeros((0, 2), int), np.zeros((0, 3), np.uint8), np.zeros(0), 4, 4)
        with pytest.raises(NoReferenceError, match="no reference samples"):
            sparse_mae(ref, np.zeros((4, 4, 3), np.uint8))

    def test_insufficient_coverage(self, rng):
        ref = random_reference(rng, n=20, w=40, h=30)
        with pytest.raises(InsufficientCoverageError):
            sparse_ssim(ref, np.zeros((30, 40, 3), np.uint8))

    def test_frame_mismatch(self, rng):
        with pytest.raises(ShapeMismatchError):
            sparse_mae(random_reference(rng), np.zeros((31, 40, 3), np.uint8))

    @given(st.integers(0, 2**31 - 1))
    @settings(max_examples=30, deadline=None)
    def test_rmse_dominates_mae_and_order_is_irrelevant(self, seed):
        rng = np.random.default_rng(seed)
        ref = random_reference(rng)
        img = rng.integers(0, 256, (30, 40, 3), dtype=np.uint8)
        assert sparse_rmse(ref, img) >= sparse_mae(ref, img) >= 0
        p = rng.permutation(len(ref))
        shuffled = SparseReference(ref.pixels[p], ref.rgb[p], ref.depth[p], 40, 30)
        assert sparse_mae(shuffled, img) == pytest.approx(sparse_mae(ref, img), abs=1e-12)
        assert sparse_rmse(shuffled, img) == pytest.approx(sparse_rmse(ref, img), abs=1e-12)

    @given(st.integers(0, 2**31 - 1))
    @settings(max_examples=30, deadline=None)
    def test_exact_sample_never_raises_error(self, seed):
        rng = np.random.default_rng(seed)
        ref = random_reference(rng, n=50)
        img = rng.integers(0, 256, (30, 40, 3), dtype=np.uint8)
        free = np.setdiff1d(np.arange(1200), ref.pixels[:, 1] * 40 + ref.pixels[:, 0])[0]
        u, v = free % 40, free // 40
        grown = SparseReference(np.vstack([ref.pixels, [[u, v]]]), np.vstack([ref.rgb, img[v, u]]),
                                np.r_[ref.depth, 1.0], 40, 30)
        assert sparse_mae(grown, img) <= sparse_mae(ref, img)
        assert sparse_rmse(grown, img) <= sparse_rmse(ref, img)

    def test_report_carries_protocol(self, textured_image):
        d = evaluate(textured_image, dense_reference(textured_image), SsimProtocol(7, 1.0, 0.6)).as_dict()
        assert d["ssim_protocol"]["window"] == 7 and d["ssim_protocol"]["min_coverage"] == 0.6
        assert d["ssim_protocol"]["c1"] == pytest.approx(6.5025)

    def test_restrict(self, textured_image):
        ref = dense_reference(textured_image)
        inner = restrict(ref, interior_mask(textured_image.shape[:2], 10))
        assert len(inner) == (160 - 20) * (200 - 20)

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import project, rot_x, rot_z
from viewstitch.errors import InvalidHomographyError, PointAtInfinityError
from viewstitch.geometry import (
    CameraModel,
    CameraPose,
    Homography,
    Intrinsics,
    PlaneParams,
    Provenance,
    RotationAngles,
    angles_from_rotation,
    apply_homography,
    camera_homography,
    check_homography,
    corner_depths,
    geometric_homography,
    intrinsics_matrix,
    planar_homography,
    pose_from_angles,
    project_points,
    relative_pose,
    rotation_from_angles,
)

angles = st.floats(-np.pi, np.pi, allow_nan=False)
K500 = Intrinsics(500.0, 320.0, 240.0)


class TestIntrinsics:
    def test_unit_focal_is_identity(self):
        assert np.array_equal(intrinsics_matrix(Intrinsics(1.0, 0.0, 0.0)), np.eye(3))

    def test_direct_placement(self):
        expected = np.array([[500.0, 0.0, 320.0], [0.0, 500.0, 240.0], [0.0, 0.0, 1.0]])
        assert np.array_equal(intrinsics_matrix(K500), expected)

    def test_principal_point_back_projects_to_axis(self):
        ray = np.linalg.solve(intrinsics_matrix(K500), [320.0, 240.0, 1.0])
        assert np.allclose(ray, [0.0, 0.0, 1.0], atol=1e-15)

    @pytest.mark.parametrize("f", [0.0, -1.0, np.inf, np.nan])
    def test_rejects_bad_focal(self, f):
        with pytest.raises(ValueError):
            Intrinsics(f, 0.0, 0.0)


class TestRotation:
    def test_zero_is_identity(self):
        assert np.array_equal(rotation_from_angles(RotationAngles(0.0, 0.0)), np.eye(3))

    def test_quarter_turn_maps_x_to_y(self):
        r = rotation_from_angles(RotationAngles(np.pi / 2, 0.0))
        assert np.allclose(r @ [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], atol=1e-15)

    def test_product_matches_frozen_values(self):
        # Rz(pi/4) Rx(pi/6) multiplied out by hand
        c, s, cp, sp = np.sqrt(0.5), np.sqrt(0.5), np.sqrt(3) / 2, 0.5
        frozen = np.array([[c, -s * cp, s * sp], [s, c * cp, -c * sp], [0.0, sp, cp]])
        got = rotation_from_angles(RotationAngles(np.pi / 4, np.pi / 6))
        assert np.allclose(got, frozen, atol=1e-15)
        assert np.allclose(got, rot_z(np.pi / 4) @ rot_x(np.pi / 6), atol=1e-15)

    @given(angles, st.floats(-1.5, 1.5))
    def test_orthonormal(self, theta, phi):
        r = rotation_from_angles(RotationAngles(theta, phi))
        assert np.allclose(r.T @ r, np.eye(3), atol=1e-9)
        assert abs(np.linalg.det(r) - 1.0) < 1e-9

    @given(angles, st.floats(-1.5, 1.5))
    def test_angles_round_trip(self, theta, phi):
        a = angles_from_rotation(pose_from_angles(RotationAngles(theta, phi)).rotation)
        assert abs(np.angle(np.exp(1j * (a.theta - theta)))) < 1e-9
        assert abs(a.phi - phi) < 1e-9

    def test_zero_pose_looks_forward(self):
        pose = pose_from_angles(RotationAngles(0.0, 0.0))
        assert np.allclose(pose.optical_axis, [0.0, -1.0, 0.0])

    def test_positive_yaw_turns_right_and_positive_pitch_looks_up(self):
        right = pose_from_angles(RotationAngles.from_degrees(90.0, 0.0)).optical_axis
        up = pose_from_angles(RotationAngles.from_degrees(0.0, 90.0)).optical_axis
        assert np.allclose(right, [1.0, 0.0, 0.0], atol=1e-12)
        assert np.allclose(up, [0.0, 0.0, -1.0], atol=1e-12)

    def test_pose_rejects_non_rotation(self):
        with pytest.raises(ValueError):
            CameraPose(np.diag([1.0, 1.0, -1.0]))


class TestGeometricHomography:
    def test_self_map_is_identity(self):
        k = Intrinsics(1.0, 0.0, 0.0)
        r = rot_z(0.3)
        h = geometric_homography(k, r, k, r)
        assert np.allclose(h.m, np.eye(3), atol=1e-15)
        assert h.provenance is Provenance.GEOMETRIC

    def test_unit_intrinsics_collapse_to_rotation(self):
        k = Intrinsics(1.0, 0.0, 0.0)
        theta = 0.4
        h = geometric_homography(k, np.eye(3), k, rot_z(theta))
        assert np.allclose(h.m, rot_z(theta), atol=1e-15)

    @given(angles, angles, st.floats(-1.0, 1.0), st.floats(-1.0, 1.0))
    @settings(max_examples=50)
    def test_round_trip_is_identity(self, t1, t2, p1, p2):
        r1 = pose_from_angles(RotationAngles(t1, p1)).rotation
        r2 = pose_from_angles(RotationAngles(t2, p2)).rotation
        fwd = geometric_homography(K500, r1, K500, r2)
        back = geometric_homography(K500, r2, K500, r1)
        assert np.allclose(Homography(back.m @ fwd.m).m, np.eye(3), atol=1e-9)

    def test_normalised(self):
        a = CameraModel.from_angles("a", 500, 320, 240, 0.0, 0.0)
        b = CameraModel.from_angles("b", 500, 320, 240, 0.2, 0.1)
        assert camera_homography(a, b).m[2, 2] == 1.0


class TestPlanarHomography:
    def test_zero_translation_reduces_to_rotation_form(self):
        r1 = pose_from_angles(RotationAngles(0.1, 0.05)).rotation
        r2 = pose_from_angles(RotationAngles(0.4, -0.1)).rotation
        r = r2 @ r1.T
        plane = PlaneParams([0.0, 0.0, -1.0], 12.0)
        ph = planar_homography(K500, K500, r, [0.0, 0.0, 0.0], plane)
        gh = geometric_homography(K500, r1, K500, r2)
        assert np.allclose(ph.m, gh.m, atol=1e-12)

    def test_far_field_limit(self):
        r = rot_z(0.2) @ rot_x(0.1)
        t = np.array([0.6, 0.0, 0.8])  # unit length
        ph = planar_homography(K500, K500, r, t, PlaneParams([0.0, 0.0, -1.0], 1e9))
        gh = Homography(intrinsics_matrix(K500) @ r @ np.linalg.inv(intrinsics_matrix(K500)))
        assert np.max(np.abs(ph.m - gh.m)) < 1e-6

    def test_fronto_parallel_plane_translation(self):
        # sideways motion over a plane at depth 10 shifts pixels by f * tx / d
        plane = PlaneParams([0.0, 0.0, -1.0], 10.0)
        h = planar_homography(K500, K500, np.eye(3), [1.0, 0.0, 0.0], plane)
        assert np.allclose(apply_homography(h, [320.0, 240.0]), [370.0, 240.0])

    def test_singular_plane_map_raises(self):
        # t n^T / d cancels the identity along z
        plane = PlaneParams([0.0, 0.0, -1.0], 1.0)
        with pytest.raises(InvalidHomographyError):
            planar_homography(K500, K500, np.eye(3), [0.0, 0.0, -1.0], plane)

    @pytest.mark.parametrize("normal,distance", [([0.0, 0.0, 2.0], 1.0), ([0.0, 0.0, 1.0], 0.0)])
    def test_plane_invariants(self, normal, distance):
        with pytest.raises(ValueError):
            PlaneParams(normal, distance)


class TestCheckHomography:
    def test_identity_is_valid(self):
        rep = check_homography(Homography.identity(), 640, 480)
        assert rep.valid and rep.convex
        assert rep.area_ratio == pytest.approx(1.0)

    def test_strong_perspective_is_invalid(self):
        h = Homography(np.array([[1, 0, 0], [0, 1, 0], [0.1, 0.1, 1.0]]))
        # corner denominators 1, 64.9, 112.8, 48.9: the far corners collapse
        w = h.m[2, 0] * 639 + h.m[2, 1] * 479 + 1
        assert w == pytest.approx(112.8)
        assert not check_homography(h, 640, 480).valid

    def test_corner_at_infinity(self):
        h = Homography(np.array([[1, 0, 0], [0, 1, 0], [-1.0 / 639, 0, 1.0]]))
        rep = check_homography(h, 640, 480)
        assert not rep.valid
        assert rep.reason == "corner at infinity"

    def test_reflection_is_invalid(self):
        rep = check_homography(Homography(np.diag([-1.0, 1.0, 1.0])), 640, 480)
        assert not rep.valid and not rep.convex

    @pytest.mark.parametrize("scale,valid", [(0.3, False), (0.4, True), (3.0, True), (3.3, False)])
    def test_area_ratio_bounds(self, scale, valid):
        assert check_homography(Homography(np.diag([scale, scale, 1.0])), 640, 480).valid is valid

    def test_rig_rotations_pass(self):
        a = CameraModel.from_angles("a", 457, 320, 240, 0.0, 0.0)
        for yaw in (10, 20, 30):
            b = CameraModel.from_angles("b", 457, 320, 240, np.deg2rad(yaw), 0.0)
            assert check_homography(camera_homography(a, b), 640, 480).valid

    def test_corner_depths_detect_backward_camera(self):
        a = CameraModel.from_angles("a", 457, 320, 240, 0.0, 0.0)
        b = CameraModel.from_angles("b", 457, 320, 240, np.pi, 0.0)
        assert np.all(corner_depths(a, a) > 0)
        assert np.all(corner_depths(a, b) < 0)


class TestApplyHomography:
    def test_identity(self):
        assert np.array_equal(apply_homography(Homography.identity(), [10.0, 20.0]), [10.0, 20.0])

    def test_translation(self):
        assert np.allclose(apply_homography(Homography.translation(5, -2), [0.0, 0.0]), [5.0, -2.0])

    def test_scale_invariance(self):
        h = Homography(np.diag([2.0, 2.0, 2.0]))
        assert np.allclose(apply_homography(h, [7.0, 9.0]), [7.0, 9.0])

    def test_point_at_infinity(self):
        h = Homography(np.array([[1.0, 0, 0], [0, 1, 0], [1.0, 0, 0]]))
        with pytest.raises(PointAtInfinityError):
            apply_homography(h, [0.0, 5.0])

    def test_project_points_flags_instead_of_raising(self):
        h = Homography(np.array([[1.0, 0, 0], [0, 1, 0], [1.0, 0, 0]]))
        out, ok = project_points(h, np.array([[0.0, 5.0], [1.0, 1.0]]))
        assert ok.tolist() == [False, True]
        assert np.isnan(out[0]).all() and np.allclose(out[1], [1.0, 1.0])

    @given(st.floats(0.01, 100.0), st.floats(-50, 50), st.floats(-50, 50))
    def test_rescaling_matrix_is_invisible(self, s, x, y):
        m = np.array([[1.1, 0.05, 3.0], [-0.02, 0.97, -4.0], [1e-4, -2e-4, 1.0]])
        a = apply_homography(Homography(m), [x, y])
        b = apply_homography(Homography(s * m), [x, y])
        assert np.allclose(a, b, atol=1e-9)
        assert np.allclose(a, project(m, x, y), atol=1e-9)


def test_relative_pose_maps_camera_coordinates():
    a = CameraModel.from_angles("a", 500, 320, 240, 0.2, 0.1, (0.1, -0.2, 0.0))
    b = CameraModel.from_angles("b", 500, 320, 240, -0.3, 0.0, (0.5, 0.1, -0.1))
    x = np.array([[3.0, -7.0, 0.5]])
    r, t = relative_pose(a.pose, b.pose)
    assert np.allclose(a.pose.to_camera(x) @ r.T + t, b.pose.to_camera(x))

"""Geometry tests: every numeric expectation comes from an independent
hand computation (explicit matrices, math.cos/sin, np.cross) rather than
from the code under test."""

from __future__ import annotations

import math
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spatialbeam.geometry import (
    Action,
    ActionKind,
    CameraPose,
    Intrinsics,
    PluckerMap,
    Trajectory,
    compose,
    cumulative_poses,
    decompose_pitch,
    move_forward,
    pitch_rotation,
    plucker_map,
    plucker_map_with_pitch,
    pose_of_action,
    turn_left,
    turn_right,
)


def yaw_matrix_oracle(degrees: float) -> np.ndarray:
    """Independent evaluation of the turn-left rotation (about -y)."""
    rad = math.radians(degrees)
    c, s = math.cos(rad), math.sin(rad)
    return np.array([[c, 0.0, -s], [0.0, 1.0, 0.0], [s, 0.0, c]])


def matmul_oracle(a: CameraPose, b: CameraPose) -> np.ndarray:
    """4x4 homogeneous product computed by hand-built matrices."""
    ma = np.eye(4)
    ma[:3, :3] = a.rotation
    ma[:3, 3] = a.translation
    mb = np.eye(4)
    mb[:3, :3] = b.rotation
    mb[:3, 3] = b.translation
    return ma @ mb


def max_pose_diff(pose: CameraPose, matrix: np.ndarray) -> float:
    return float(np.max(np.abs(pose.matrix() - matrix)))


def random_pose(rng: np.random.Generator) -> CameraPose:
    from scipy.spatial.transform import Rotation

    r = Rotation.random(random_state=np.random.RandomState(rng.integers(2**31)))
    return CameraPose(r.as_matrix(), rng.uniform(-2.0, 2.0, size=3))


actions_st = st.one_of(
    st.floats(0.05, 1.0).map(move_forward),
    st.floats(1.0, 45.0).map(turn_left),
    st.floats(1.0, 45.0).map(turn_right),
)
trajectories_st = st.lists(actions_st, max_size=8).map(lambda a: Trajectory(tuple(a)))


class TestAction:
    def test_rejects_nonpositive_magnitude(self):
        with pytest.raises(ValueError):
            Action(ActionKind.MOVE_FORWARD, 0.0)
        with pytest.raises(ValueError):
            Action(ActionKind.TURN_LEFT, -9.0)
        with pytest.raises(ValueError):
            Action(ActionKind.TURN_LEFT, float("nan"))

    def test_rejects_unknown_kind(self):
        with pytest.raises(ValueError):
            Action("sidestep", 1.0)  # type: ignore[arg-type]


class TestPoseOfAction:
    def test_move_forward_quarter_meter(self):
        pose = pose_of_action(move_forward(0.25))
        assert np.array_equal(pose.rotation, np.eye(3))
        assert np.linalg.norm(pose.translation) == pytest.approx(0.25)
        np.testing.assert_array_equal(pose.translation, [0.0, 0.0, 0.25])

    def test_turn_pair_cancels(self):
        pose = compose(pose_of_action(turn_left(9.0)), pose_of_action(turn_right(9.0)))
        assert max_pose_diff(pose, np.eye(4)) < 1e-9

    def test_turn_left_nine_degrees_entries(self):
        pose = pose_of_action(turn_left(9.0))
        expected = yaw_matrix_oracle(9.0)
        # In-plane diagonal carries cos 9 deg ~ 0.98769.
        assert expected[0, 0] == pytest.approx(0.98769, abs=1e-5)
        np.testing.assert_allclose(pose.rotation, expected, atol=1e-15)
        np.testing.assert_array_equal(pose.translation, np.zeros(3))

    def test_turn_right_is_negative_yaw(self):
        pose = pose_of_action(turn_right(30.0))
        np.testing.assert_allclose(pose.rotation, yaw_matrix_oracle(-30.0), atol=1e-15)

    def test_turn_left_faces_leftward(self):
        # x points right, so a left turn gives the forward axis a negative x.
        forward = pose_of_action(turn_left(30.0)).forward_axis()
        assert forward[0] < 0
        assert forward[2] > 0


class TestCompose:
    def test_identity_laws(self):
        rng = np.random.default_rng(11)
        pose = random_pose(rng)
        ident = CameraPose.identity()
        assert max_pose_diff(compose(pose, ident), pose.matrix()) == 0.0
        assert max_pose_diff(compose(ident, pose), pose.matrix()) == 0.0

    def test_two_forward_steps(self):
        a = pose_of_action(move_forward(0.25))
        result = compose(a, a)
        np.testing.assert_allclose(result.matrix(), matmul_oracle(a, a), atol=0)
        assert np.linalg.norm(result.translation) == pytest.approx(0.5)
        np.testing.assert_array_equal(result.translation, [0.0, 0.0, 0.5])

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_associative_on_random_triples(self, seed):
        rng = np.random.default_rng(seed)
        a, b, c = (random_pose(rng) for _ in range(3))
        left = compose(compose(a, b), c)
        right = compose(a, compose(b, c))
        assert max_pose_diff(left, right.matrix()) < 1e-9

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_every_pose_has_inverse(self, seed):
        rng = np.random.default_rng(seed)
        pose = random_pose(rng)
        assert max_pose_diff(compose(pose, pose.inverse()), np.eye(4)) < 1e-9


class TestCumulativePoses:
    def test_empty_trajectory(self):
        assert cumulative_poses(Trajectory()) == []

    def test_forward_then_turn(self):
        traj = Trajectory((move_forward(0.25), turn_left(9.0)))
        poses = cumulative_poses(traj)
        assert len(poses) == 2
        oracle = matmul_oracle(pose_of_action(move_forward(0.25)),
                               pose_of_action(turn_left(9.0)))
        np.testing.assert_allclose(poses[1].matrix(), oracle, atol=0)
        np.testing.assert_array_equal(poses[1].translation, poses[0].translation)
        np.testing.assert_allclose(poses[1].rotation, yaw_matrix_oracle(9.0), atol=1e-15)

    def test_ten_left_turns_reach_ninety_degrees(self):
        traj = Trajectory(tuple(turn_left(9.0) for _ in range(10)))
        final = cumulative_poses(traj)[-1]
        np.testing.assert_allclose(final.rotation, yaw_matrix_oracle(90.0), atol=1e-9)
        np.testing.assert_array_equal(final.translation, np.zeros(3))

    @given(trajectories_st)
    @settings(max_examples=50, deadline=None)
    def test_length_matches_trajectory(self, traj):
        assert len(cumulative_poses(traj)) == len(traj)

    def test_turn_only_translation_is_exactly_zero(self):
        traj = Trajectory((turn_left(9.0), turn_right(4.5), turn_left(13.0)))
        for pose in cumulative_poses(traj):
            assert np.array_equal(pose.translation, np.zeros(3))

    def test_forward_only_rotation_is_exactly_identity(self):
        traj = Trajectory(tuple(move_forward(0.25) for _ in range(8)))
        for pose in cumulative_poses(traj):
            assert np.array_equal(pose.rotation, np.eye(3))


class TestPitch:
    def test_zero_is_identity(self):
        assert max_pose_diff(pitch_rotation(0.0), np.eye(4)) == 0.0

    def test_ninety_degree_entries(self):
        r = pitch_rotation(90.0).rotation
        # Rows (1,0,0), (0,cos,-sin), (0,sin,cos) at theta = 90.
        np.testing.assert_allclose(r[0], [1.0, 0.0, 0.0], atol=1e-15)
        assert r[1, 1] == pytest.approx(0.0, abs=1e-15)
        assert r[1, 2] == pytest.approx(-1.0)
        assert r[2, 1] == pytest.approx(1.0)
        assert r[2, 2] == pytest.approx(0.0, abs=1e-15)

    def test_inverse_pair(self):
        pose = compose(pitch_rotation(37.0), pitch_rotation(-37.0))
        assert max_pose_diff(pose, np.eye(4)) < 1e-9

    def test_decompose_zero_pitch_returns_input(self):
        rng = np.random.default_rng(3)
        pose = random_pose(rng)
        horizontal = decompose_pitch(pose, 0.0)
        assert max_pose_diff(horizontal, pose.matrix()) == 0.0

    def test_decompose_pure_pitch_gives_identity(self):
        horizontal = decompose_pitch(pitch_rotation(20.0), 20.0)
        assert max_pose_diff(horizontal, np.eye(4)) < 1e-12

    def test_reconstruction_random_pose(self):
        rng = np.random.default_rng(4)
        pose = random_pose(rng)
        horizontal = decompose_pitch(pose, 20.0)
        rebuilt = compose(pitch_rotation(20.0), horizontal)
        assert max_pose_diff(rebuilt, pose.matrix()) < 1e-9

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(-89.0, 89.0))
    def test_factorization_property(self, seed, theta):
        rng = np.random.default_rng(seed)
        pose = random_pose(rng)
        rebuilt = compose(pitch_rotation(theta), decompose_pitch(pose, theta))
        assert max_pose_diff(rebuilt, pose.matrix()) < 1e-9


class TestIntrinsics:
    def test_validation(self):
        with pytest.raises(ValueError):
            Intrinsics(fx=-1, fy=1, cx=0, cy=0, width=4, height=4)
        with pytest.raises(ValueError):
            Intrinsics(fx=1, fy=1, cx=9, cy=0, width=4, height=4)

    def test_from_fov_sixty(self):
        k = Intrinsics.from_fov(256, 256, 60.0)
        assert k.fx == pytest.approx(128.0 / math.tan(math.radians(30.0)))
        assert k.cx == 128.0 and k.cy == 128.0


class TestPluckerMap:
    def principal_k(self) -> Intrinsics:
        # Principal point on an exact pixel center so the principal ray
        # lands on pixel (32, 32).
        return Intrinsics(fx=50.0, fy=50.0, cx=32.5, cy=32.5, width=64, height=64)

    def test_identity_pose_principal_pixel(self):
        pm = plucker_map(self.principal_k(), CameraPose.identity())
        np.testing.assert_allclose(pm.directions()[32, 32], [0.0, 0.0, 1.0], atol=1e-7)
        np.testing.assert_allclose(pm.moments()[32, 32], [0.0, 0.0, 0.0], atol=1e-7)

    def test_translated_pose_moment_is_cross_product(self):
        pose = CameraPose(np.eye(3), np.array([1.0, 0.0, 0.0]))
        pm = plucker_map(self.principal_k(), pose)
        expected = np.cross([1.0, 0.0, 0.0], [0.0, 0.0, 1.0])
        np.testing.assert_array_equal(expected, [0.0, -1.0, 0.0])
        np.testing.assert_allclose(pm.moments()[32, 32], expected, atol=1e-7)
        np.testing.assert_allclose(pm.directions()[32, 32], [0.0, 0.0, 1.0], atol=1e-7)

    def test_unit_norm_and_orthogonality_everywhere(self, k64):
        rng = np.random.default_rng(5)
        pose = random_pose(rng)
        pm = plucker_map(k64, pose)
        norms = np.linalg.norm(pm.directions(), axis=-1)
        np.testing.assert_allclose(norms, 1.0, atol=1e-6)
        dots = np.sum(pm.moments() * pm.directions(), axis=-1)
        np.testing.assert_allclose(dots, 0.0, atol=1e-6)

    def test_deterministic(self, k64):
        rng = np.random.default_rng(6)
        pose = random_pose(rng)
        assert plucker_map(k64, pose).to_bytes() == plucker_map(k64, pose).to_bytes()

    def test_with_pitch_zero_matches_plain(self, k64):
        rng = np.random.default_rng(7)
        pose = random_pose(rng)
        with_pitch = plucker_map_with_pitch(k64, pose, 0.0)
        plain = plucker_map(k64, pose)
        np.testing.assert_array_equal(with_pitch.data[..., :6], plain.data)
        assert np.all(with_pitch.data[..., 6] == 0.0)

    def test_pitch_channel_broadcast(self, k64):
        pm = plucker_map_with_pitch(k64, CameraPose.identity(), 15.0)
        assert pm.channels == 7
        assert np.all(pm.data[..., 6] == np.float32(15.0))

    def test_pure_pitch_extrinsic_reduces_to_identity_map(self, k64):
        pm = plucker_map_with_pitch(k64, pitch_rotation(25.0), 25.0)
        identity_map = plucker_map(k64, CameraPose.identity())
        np.testing.assert_allclose(pm.data[..., :6], identity_map.data, atol=1e-6)


class TestPluckerWire:
    def test_roundtrip(self, k32):
        pm = plucker_map_with_pitch(k32, pitch_rotation(10.0), 10.0)
        payload = pm.to_bytes()
        back = PluckerMap.from_bytes(payload)
        assert (back.height, back.width, back.channels) == (32, 32, 7)
        assert back.pitch_degrees == pytest.approx(10.0)
        np.testing.assert_array_equal(back.data, pm.data)

    def test_header_layout(self, k32):
        pm = plucker_map(k32, CameraPose.identity())
        payload = pm.to_bytes()
        magic, h, w, c, pitch, r0, r1, r2 = struct.unpack_from("<4sIIIfIII", payload)
        assert magic == b"PLK1"
        assert (h, w, c) == (32, 32, 6)
        assert pitch == 0.0 and (r0, r1, r2) == (0, 0, 0)
        assert len(payload) == 32 + 32 * 32 * 6 * 4

    def test_rejects_bad_magic(self):
        with pytest.raises(ValueError):
            PluckerMap.from_bytes(b"NOPE" + b"\x00" * 28)

    def test_rejects_truncated_payload(self, k32):
        payload = plucker_map(k32, CameraPose.identity()).to_bytes()
        with pytest.raises(ValueError):
            PluckerMap.from_bytes(payload[:-4])


class TestCameraPoseValidation:
    def test_rejects_non_orthonormal(self):
        with pytest.raises(ValueError):
            CameraPose(np.eye(3) * 1.001, np.zeros(3))

    def test_rejects_reflection(self):
        m = np.diag([1.0, 1.0, -1.0])
        with pytest.raises(ValueError):
            CameraPose(m, np.zeros(3))

    def test_arrays_are_immutable(self):
        pose = CameraPose.identity()
        with pytest.raises(ValueError):
            pose.rotation[0, 0] = 5.0

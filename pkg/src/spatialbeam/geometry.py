"""Rigid-body algebra for the egocentric action set and Plucker ray maps.

Coordinate convention, used by every module in this package:

* right-handed camera frame: x points right, y points down, z points
  forward out of the lens;
* a pose is the camera-to-reference transform ``[R | t]``: a point ``v``
  in camera coordinates maps to the reference frame as ``R @ v + t``,
  and the camera center sits at ``t``;
* ``move forward`` translates along +z; yaw is a rotation about the -y
  (up) axis, so a left turn swings the view leftward on screen;
* pitch is a rotation about the camera's local x axis;
* angles are degrees at every interface, radians only inside trig calls.

All operations here are pure functions on immutable values and are safe
to call concurrently.
"""

from __future__ import annotations

import enum
import math
import struct
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

# Tolerance for rotation-matrix sanity checks (orthonormality, det = +1).
ROTATION_TOL = 1e-9


class ActionKind(enum.Enum):
    MOVE_FORWARD = "move_forward"
    TURN_LEFT = "turn_left"
    TURN_RIGHT = "turn_right"


# Canonical short letters used in trajectory strings ("F0.25|L9|R9").
ACTION_LETTER = {
    ActionKind.MOVE_FORWARD: "F",
    ActionKind.TURN_LEFT: "L",
    ActionKind.TURN_RIGHT: "R",
}
LETTER_ACTION = {v: k for k, v in ACTION_LETTER.items()}


@dataclass(frozen=True)
class Action:
    """One primitive egocentric move.

    ``magnitude`` is meters for a forward move and degrees for a turn;
    it must be strictly positive (there is no backward or zero action).
    """

    kind: ActionKind
    magnitude: float

    def __post_init__(self) -> None:
        if not isinstance(self.kind, ActionKind):
            raise ValueError(f"unknown action kind: {self.kind!r}")
        mag = float(self.magnitude)
        if not (math.isfinite(mag) and mag > 0.0):
            raise ValueError(f"action magnitude must be positive and finite, got {self.magnitude!r}")
        object.__setattr__(self, "magnitude", mag)


def move_forward(meters: float) -> Action:
    return Action(ActionKind.MOVE_FORWARD, meters)


def turn_left(degrees: float) -> Action:
    return Action(ActionKind.TURN_LEFT, degrees)


def turn_right(degrees: float) -> Action:
    return Action(ActionKind.TURN_RIGHT, degrees)


@dataclass(frozen=True)
class Trajectory:
    """An ordered, possibly empty sequence of primitive actions."""

    actions: tuple[Action, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "actions", tuple(self.actions))

    def __len__(self) -> int:
        return len(self.actions)

    def __iter__(self):
        return iter(self.actions)

    def __bool__(self) -> bool:
        return bool(self.actions)

    @property
    def last(self) -> Action | None:
        return self.actions[-1] if self.actions else None

    def extend(self, action: Action, times: int = 1) -> "Trajectory":
        if times < 1:
            raise ValueError(f"times must be >= 1, got {times}")
        return Trajectory(self.actions + (action,) * times)

    def forward_meters(self) -> float:
        """Total forward translation commanded, in meters."""
        return sum(a.magnitude for a in self.actions if a.kind is ActionKind.MOVE_FORWARD)

    def net_yaw_degrees(self) -> float:
        """Signed net yaw in degrees; left turns count positive."""
        total = 0.0
        for a in self.actions:
            if a.kind is ActionKind.TURN_LEFT:
                total += a.magnitude
            elif a.kind is ActionKind.TURN_RIGHT:
                total -= a.magnitude
        return total


@dataclass(frozen=True, eq=False)
class CameraPose:
    """Camera-to-reference rigid transform ``[R | t]`` on SE(3)."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self) -> None:
        r = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64)
        if r.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got shape {r.shape}")
        if t.shape != (3,):
            raise ValueError(f"translation must be a 3-vector, got shape {t.shape}")
        if not np.all(np.isfinite(r)) or not np.all(np.isfinite(t)):
            raise ValueError("pose entries must be finite")
        if np.max(np.abs(r.T @ r - np.eye(3))) > ROTATION_TOL:
            raise ValueError("rotation is not orthonormal within tolerance")
        if abs(np.linalg.det(r) - 1.0) > ROTATION_TOL:
            raise ValueError("rotation determinant is not +1 within tolerance")
        r = r.copy()
        t = t.copy()
        r.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "CameraPose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> "CameraPose":
        m = np.asarray(m, dtype=np.float64)
        if m.shape != (4, 4):
            raise ValueError(f"expected a 4x4 matrix, got shape {m.shape}")
        return cls(m[:3, :3], m[:3, 3])

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def inverse(self) -> "CameraPose":
        rt = self.rotation.T
        return CameraPose(rt, -(rt @ self.translation))

    def forward_axis(self) -> np.ndarray:
        """The camera's +z (viewing) direction expressed in the reference frame."""
        return self.rotation @ np.array([0.0, 0.0, 1.0])


def compose(first: CameraPose, second: CameraPose) -> CameraPose:
    """Pose reached by applying ``first`` then ``second``.

    The result is expressed in the frame ``first`` is expressed in;
    as matrices this is ``first @ second``.
    """
    return CameraPose(
        first.rotation @ second.rotation,
        first.rotation @ second.translation + first.translation,
    )


def _yaw(degrees: float) -> np.ndarray:
    """Rotation by ``degrees`` about the -y (up) axis: positive turns left."""
    rad = math.radians(degrees)
    c, s = math.cos(rad), math.sin(rad)
    return np.array([[c, 0.0, -s], [0.0, 1.0, 0.0], [s, 0.0, c]])


def pose_of_action(action: Action) -> CameraPose:
    """Relative camera transform produced by executing one primitive action."""
    if action.kind is ActionKind.MOVE_FORWARD:
        return CameraPose(np.eye(3), np.array([0.0, 0.0, action.magnitude]))
    if action.kind is ActionKind.TURN_LEFT:
        return CameraPose(_yaw(action.magnitude), np.zeros(3))
    return CameraPose(_yaw(-action.magnitude), np.zeros(3))


def cumulative_poses(trajectory: Trajectory) -> list[CameraPose]:
    """Reference-relative pose after each step of ``trajectory``.

    Element ``i`` is the composition of the per-step transforms of actions
    ``1..i+1``, i.e. the camera pose of frame ``i+1`` relative to frame 0.
    The empty trajectory yields an empty list.
    """
    poses: list[CameraPose] = []
    current = CameraPose.identity()
    for action in trajectory:
        current = compose(current, pose_of_action(action))
        poses.append(current)
    return poses


def pitch_rotation(degrees: float) -> CameraPose:
    """Pure pitch: rotation about the camera's local x axis, zero translation."""
    rad = math.radians(degrees)
    c, s = math.cos(rad), math.sin(rad)
    r = np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])
    return CameraPose(r, np.zeros(3))


def decompose_pitch(extrinsic: CameraPose, degrees: float) -> CameraPose:
    """Horizontal remainder T such that ``pitch_rotation(degrees) . T`` equals the input."""
    return compose(pitch_rotation(-degrees), extrinsic)


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole intrinsics; focal lengths and principal point in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self) -> None:
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image dimensions must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    @classmethod
    def from_fov(cls, width: int, height: int, fov_degrees: float = 60.0) -> "Intrinsics":
        """Square-pixel intrinsics from a horizontal field of view."""
        fx = (width / 2.0) / math.tan(math.radians(fov_degrees) / 2.0)
        return cls(fx=fx, fy=fx, cx=width / 2.0, cy=height / 2.0, width=width, height=height)

    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])


@lru_cache(maxsize=16)
def pixel_directions(intrinsics: Intrinsics) -> np.ndarray:
    """Unit ray directions through every pixel center, camera frame.

    Pixel (u, v) is sampled at its center (u + 0.5, v + 0.5). Returns a
    read-only array of shape (height * width, 3), row-major over pixels.
    """
    us = (np.arange(intrinsics.width) + 0.5 - intrinsics.cx) / intrinsics.fx
    vs = (np.arange(intrinsics.height) + 0.5 - intrinsics.cy) / intrinsics.fy
    uu, vv = np.meshgrid(us, vs)
    dirs = np.stack([uu, vv, np.ones_like(uu)], axis=-1).reshape(-1, 3)
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    dirs.flags.writeable = False
    return dirs


WIRE_MAGIC = b"PLK1"
_HEADER = struct.Struct("<4sIIIfIII")


@dataclass(frozen=True, eq=False)
class PluckerMap:
    """Per-pixel (moment, direction) ray encoding, optionally plus pitch.

    ``data`` has shape (height, width, channels) float32 with channels
    0..2 the moment ``o x d``, 3..5 the unit direction ``d``, and for
    7-channel maps channel 6 the broadcast pitch in degrees.
    """

    height: int
    width: int
    channels: int
    data: np.ndarray
    pitch_degrees: float | None = None

    def __post_init__(self) -> None:
        if self.channels not in (6, 7):
            raise ValueError(f"channels must be 6 or 7, got {self.channels}")
        if (self.pitch_degrees is not None) != (self.channels == 7):
            raise ValueError("pitch is present exactly when channels == 7")
        d = np.asarray(self.data, dtype=np.float32)
        if d.shape != (self.height, self.width, self.channels):
            raise ValueError(f"data shape {d.shape} does not match header")
        d = d.copy()
        d.flags.writeable = False
        object.__setattr__(self, "data", d)

    def moments(self) -> np.ndarray:
        return self.data[..., 0:3]

    def directions(self) -> np.ndarray:
        return self.data[..., 3:6]

    def to_bytes(self) -> bytes:
        """Wire form: magic, h, w, channels, pitch, 3 reserved zeros, then
        row-major little-endian float32 samples."""
        pitch = 0.0 if self.pitch_degrees is None else float(self.pitch_degrees)
        header = _HEADER.pack(WIRE_MAGIC, self.height, self.width, self.channels, pitch, 0, 0, 0)
        return header + self.data.astype("<f4").tobytes(order="C")

    @classmethod
    def from_bytes(cls, payload: bytes) -> "PluckerMap":
        if len(payload) < _HEADER.size:
            raise ValueError("payload shorter than header")
        magic, h, w, channels, pitch, *_ = _HEADER.unpack_from(payload)
        if magic != WIRE_MAGIC:
            raise ValueError(f"bad magic: {magic!r}")
        expected = _HEADER.size + h * w * channels * 4
        if len(payload) != expected:
            raise ValueError(f"payload length {len(payload)} != expected {expected}")
        data = np.frombuffer(payload, dtype="<f4", offset=_HEADER.size).reshape(h, w, channels)
        return cls(h, w, channels, data, pitch if channels == 7 else None)


def plucker_map(intrinsics: Intrinsics, extrinsic: CameraPose) -> PluckerMap:
    """6-channel ray map: per pixel the pair (o x d, d).

    The raw direction through each pixel, rotated into the reference
    frame, is unit-normalized before the moment is taken, which makes
    the encoding scale-canonical.
    """
    dirs = pixel_directions(intrinsics) @ extrinsic.rotation.T
    origin = np.broadcast_to(extrinsic.translation, dirs.shape)
    moments = np.cross(origin, dirs)
    data = np.concatenate([moments, dirs], axis=1).reshape(
        intrinsics.height, intrinsics.width, 6
    )
    return PluckerMap(intrinsics.height, intrinsics.width, 6, data.astype(np.float32))


def plucker_map_with_pitch(
    intrinsics: Intrinsics, extrinsic: CameraPose, pitch_degrees: float
) -> PluckerMap:
    """7-channel map: ray map of the horizontal remainder plus a constant pitch channel."""
    horizontal = decompose_pitch(extrinsic, pitch_degrees)
    base = plucker_map(intrinsics, horizontal)
    pitch_channel = np.full(
        (intrinsics.height, intrinsics.width, 1), pitch_degrees, dtype=np.float32
    )
    data = np.concatenate([np.asarray(base.data), pitch_channel], axis=2)
    return PluckerMap(intrinsics.height, intrinsics.width, 7, data, float(pitch_degrees))

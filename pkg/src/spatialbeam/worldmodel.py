"""World-model backends: deterministic raycaster and remote wire client.

A world model maps (reference image, pose sequence) to one rendered frame
per pose. Two backends live here:

* :class:`SyntheticWorldModel` raycasts an explicit :class:`Scene` — an
  exact, deterministic ground truth used for verification and benchmarks;
* :class:`RemoteWorldModel` speaks the rollout wire protocol to an
  external service (e.g. a video-diffusion generator behind an adapter).

Both honor the prefix-consistency contract: the first frames of a rollout
equal the rollouts of its pose-sequence prefixes. That is exact for the
synthetic backend and best-effort (documented, untested) for generative
remotes.

Wire protocol (shared with the adapter service):

* ``POST {endpoint}/v1/rollout`` with JSON body ``{"protocol": 1,
  "reference": <base64 PNG>, "intrinsics": {fx, fy, cx, cy, w, h},
  "pitch_deg": float, "poses": [{"R": [9 floats row-major], "t": [3]}]}``;
  response ``{"frames": [<base64 PNG>, ...]}``, one frame per pose;
  errors are ``{"error": {"code": ..., "message": ...}}`` with a 4xx/5xx
  status.
* ``GET {endpoint}/v1/health`` returns ``{"status": "ok", "backend": ...}``.

Scenes and frames are immutable after construction; ``render`` and
``visibility`` are pure and freely parallelizable.
"""

from __future__ import annotations

import base64
import io
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import requests
from PIL import Image

from .geometry import CameraPose, Intrinsics, compose, pitch_rotation, pixel_directions

logger = logging.getLogger(__name__)

PROTOCOL_VERSION = 1

# The floor plane sits this far below the reference camera (y points down).
GROUND_PLANE_Y = 1.5

# Fixed Lambert light: direction toward the light, plus an ambient floor.
LIGHT_DIRECTION = np.array([1.0, -1.0, 1.0]) / np.sqrt(3.0)
AMBIENT = 0.3

_EPS = 1e-6

# Hit-id codes for non-object surfaces in the traced id buffer.
_SKY = -1
_GROUND = -2


class WorldModelError(Exception):
    """Base class for world-model faults."""


class TransportError(WorldModelError):
    """The remote endpoint could not be reached or timed out."""


class ProtocolError(WorldModelError):
    """The remote endpoint violated the wire contract."""


class ValidationError(WorldModelError):
    """A request or response failed local validation."""


@dataclass(frozen=True, eq=False)
class Frame:
    """One rendered RGB image; pixels are row-major uint8 of shape (h, w, 3)."""

    pixels: np.ndarray

    def __post_init__(self) -> None:
        p = np.asarray(self.pixels)
        if p.ndim != 3 or p.shape[2] != 3 or p.dtype != np.uint8:
            raise ValueError(f"pixels must be (h, w, 3) uint8, got {p.shape} {p.dtype}")
        p = p.copy()
        p.flags.writeable = False
        object.__setattr__(self, "pixels", p)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    def same_pixels(self, other: "Frame") -> bool:
        return bool(np.array_equal(self.pixels, other.pixels))

    def to_png_bytes(self) -> bytes:
        buf = io.BytesIO()
        Image.fromarray(np.asarray(self.pixels), "RGB").save(buf, format="PNG")
        return buf.getvalue()

    @classmethod
    def from_png_bytes(cls, data: bytes) -> "Frame":
        with Image.open(io.BytesIO(data)) as img:
            return cls(np.asarray(img.convert("RGB"), dtype=np.uint8))


def _color3(value, what: str) -> tuple[int, int, int]:
    c = tuple(int(v) for v in value)
    if len(c) != 3 or any(v < 0 or v > 255 for v in c):
        raise ValueError(f"{what} must be three 0..255 components, got {value!r}")
    return c


@dataclass(frozen=True)
class SceneObject:
    """An axis-aligned box or a sphere; ``size`` is full extents for boxes."""

    object_id: str
    shape: str
    center: tuple[float, float, float]
    color: tuple[int, int, int]
    size: tuple[float, float, float] | None = None
    radius: float | None = None

    def __post_init__(self) -> None:
        if self.shape not in ("box", "sphere"):
            raise ValueError(f"shape must be 'box' or 'sphere', got {self.shape!r}")
        object.__setattr__(self, "center", tuple(float(v) for v in self.center))
        object.__setattr__(self, "color", _color3(self.color, "object color"))
        if self.shape == "box":
            if self.size is None or self.radius is not None:
                raise ValueError("boxes take 'size', not 'radius'")
            size = tuple(float(v) for v in self.size)
            if len(size) != 3 or any(v <= 0 for v in size):
                raise ValueError(f"box size must be three positive extents, got {self.size!r}")
            object.__setattr__(self, "size", size)
        else:
            if self.radius is None or self.size is not None:
                raise ValueError("spheres take 'radius', not 'size'")
            if float(self.radius) <= 0:
                raise ValueError(f"sphere radius must be positive, got {self.radius!r}")
            object.__setattr__(self, "radius", float(self.radius))

    def bottom_y(self) -> float:
        # y points down, so the lowest point has the largest y.
        if self.shape == "box":
            return self.center[1] + self.size[1] / 2.0
        return self.center[1] + self.radius


@dataclass(frozen=True)
class Scene:
    """An immutable collection of colored primitives above a ground plane."""

    objects: tuple[SceneObject, ...] = ()
    ground_color: tuple[int, int, int] = (110, 110, 110)
    sky_color: tuple[int, int, int] = (170, 200, 235)

    def __post_init__(self) -> None:
        object.__setattr__(self, "objects", tuple(self.objects))
        object.__setattr__(self, "ground_color", _color3(self.ground_color, "ground color"))
        object.__setattr__(self, "sky_color", _color3(self.sky_color, "sky color"))
        ids = [o.object_id for o in self.objects]
        if len(set(ids)) != len(ids):
            raise ValueError("object ids must be unique")
        for obj in self.objects:
            if obj.bottom_y() > GROUND_PLANE_Y + 1e-9:
                raise ValueError(f"object {obj.object_id!r} extends below the ground plane")

    def index_of(self, object_id: str) -> int:
        for i, obj in enumerate(self.objects):
            if obj.object_id == object_id:
                return i
        raise ValidationError(f"unknown object id: {object_id!r}")

    def to_json_dict(self) -> dict:
        objects = []
        for o in self.objects:
            entry: dict = {"id": o.object_id, "shape": o.shape, "center": list(o.center),
                           "color": list(o.color)}
            if o.shape == "box":
                entry["size"] = list(o.size)
            else:
                entry["radius"] = o.radius
            objects.append(entry)
        return {"objects": objects, "ground": list(self.ground_color), "sky": list(self.sky_color)}

    @classmethod
    def from_json_dict(cls, doc: dict) -> "Scene":
        objects = []
        for entry in doc.get("objects", []):
            objects.append(SceneObject(
                object_id=entry["id"],
                shape=entry["shape"],
                center=tuple(entry["center"]),
                color=tuple(entry["color"]),
                size=tuple(entry["size"]) if "size" in entry else None,
                radius=entry.get("radius"),
            ))
        return cls(
            objects=tuple(objects),
            ground_color=tuple(doc.get("ground", (110, 110, 110))),
            sky_color=tuple(doc.get("sky", (170, 200, 235))),
        )


def load_scene(path: str | Path) -> Scene:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
        return Scene.from_json_dict(doc)
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
        raise ValueError(f"invalid scene file {path}: {exc}") from exc


def save_scene(scene: Scene, path: str | Path) -> None:
    Path(path).write_text(canonical_json(scene.to_json_dict()).decode("utf-8") + "\n",
                          encoding="utf-8")


def _intersect(scene: Scene, origin: np.ndarray, dirs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Nearest hit per ray: returns (ids, t) with ids in {_SKY, _GROUND, 0..n-1}."""
    n = dirs.shape[0]
    best_t = np.full(n, np.inf)
    ids = np.full(n, _SKY, dtype=np.int32)

    # Ground plane y = GROUND_PLANE_Y, normal pointing up (-y).
    dy = dirs[:, 1]
    with np.errstate(divide="ignore", invalid="ignore"):
        t_ground = (GROUND_PLANE_Y - origin[1]) / dy
    hit = (dy > 0) & (t_ground > _EPS)
    best_t = np.where(hit, t_ground, best_t)
    ids = np.where(hit, _GROUND, ids)

    for index, obj in enumerate(scene.objects):
        center = np.asarray(obj.center)
        if obj.shape == "sphere":
            oc = origin - center
            b = dirs @ oc
            disc = b * b - (oc @ oc - obj.radius**2)
            with np.errstate(invalid="ignore"):
                root = np.sqrt(np.maximum(disc, 0.0))
            t_near = -b - root
            t_far = -b + root
            t_obj = np.where(t_near > _EPS, t_near, t_far)
            hit = (disc >= 0) & (t_obj > _EPS)
        else:
            half = np.asarray(obj.size) / 2.0
            lo = center - half
            hi = center + half
            t_enter = np.full(n, -np.inf)
            t_exit = np.full(n, np.inf)
            # Per-axis slab test; unrolled 1-D ops beat (N, 3) reductions.
            for axis in range(3):
                with np.errstate(divide="ignore", invalid="ignore"):
                    ta = (lo[axis] - origin[axis]) / dirs[:, axis]
                    tb = (hi[axis] - origin[axis]) / dirs[:, axis]
                t_enter = np.maximum(t_enter, np.minimum(ta, tb))
                t_exit = np.minimum(t_exit, np.maximum(ta, tb))
            t_obj = np.where(t_enter > _EPS, t_enter, t_exit)
            hit = (t_exit >= t_enter) & (t_exit > _EPS)
        closer = hit & (t_obj < best_t)
        best_t = np.where(closer, t_obj, best_t)
        ids = np.where(closer, index, ids)
    return ids, best_t


def _shade(base_color: tuple[int, int, int], normals: np.ndarray) -> np.ndarray:
    """Lambert shading: ambient plus diffuse from the fixed light."""
    diffuse = np.clip(normals @ LIGHT_DIRECTION, 0.0, None)
    intensity = AMBIENT + (1.0 - AMBIENT) * diffuse
    return np.asarray(base_color) * intensity[:, None]


def render(scene: Scene, pose: CameraPose, intrinsics: Intrinsics) -> Frame:
    """Raycast the scene from ``pose``; deterministic for identical inputs."""
    dirs = pixel_directions(intrinsics) @ pose.rotation.T
    origin = pose.translation
    ids, t = _intersect(scene, origin, dirs)

    color = np.empty((dirs.shape[0], 3), dtype=np.float64)
    color[:] = scene.sky_color

    ground = ids == _GROUND
    if ground.any():
        up = np.array([0.0, -1.0, 0.0])
        color[ground] = _shade(scene.ground_color, np.broadcast_to(up, (int(ground.sum()), 3)))

    for index, obj in enumerate(scene.objects):
        mask = ids == index
        if not mask.any():
            continue
        points = origin + t[mask, None] * dirs[mask]
        offset = points - np.asarray(obj.center)
        if obj.shape == "sphere":
            normals = offset / obj.radius
        else:
            half = np.asarray(obj.size) / 2.0
            scaled = offset / half
            axis = np.argmax(np.abs(scaled), axis=1)
            normals = np.zeros_like(points)
            normals[np.arange(len(points)), axis] = np.sign(
                scaled[np.arange(len(points)), axis]
            )
        color[mask] = _shade(obj.color, normals)

    pixels = np.clip(np.rint(color), 0, 255).astype(np.uint8)
    return Frame(pixels.reshape(intrinsics.height, intrinsics.width, 3))


def visibility(scene: Scene, pose: CameraPose, intrinsics: Intrinsics, object_id: str) -> float:
    """Fraction of image pixels whose nearest hit is ``object_id``.

    Uses the same raycaster as :func:`render`, so the fraction matches the
    pixels that would carry that object's color.
    """
    index = scene.index_of(object_id)
    dirs = pixel_directions(intrinsics) @ pose.rotation.T
    ids, _ = _intersect(scene, pose.translation, dirs)
    return float(np.mean(ids == index))


@dataclass(frozen=True)
class RolloutRequest:
    """One world-model call: render every pose, reference-relative cumulative."""

    reference: Frame
    poses: tuple[CameraPose, ...]
    intrinsics: Intrinsics
    pitch_degrees: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "poses", tuple(self.poses))
        if not self.poses:
            raise ValueError("a rollout needs at least one pose")


class SyntheticWorldModel:
    """Exact geometric backend: renders the bound scene at each requested pose.

    The reference image in the request is ignored; the scene is the ground
    truth. A nonzero request pitch tilts the camera in its local frame
    after the horizontal motion (full extrinsic = pose . pitch), so the
    agent still translates horizontally and yaws about the world vertical
    while the view stays tilted — the action set preserves pitch.
    """

    def __init__(self, scene: Scene):
        self.scene = scene

    @property
    def name(self) -> str:
        return "synthetic-raycast"

    def rollout(self, request: RolloutRequest) -> list[Frame]:
        frames = []
        for pose in request.poses:
            full = pose if request.pitch_degrees == 0.0 else compose(
                pose, pitch_rotation(request.pitch_degrees)
            )
            frames.append(render(self.scene, full, request.intrinsics))
        return frames


def canonical_json(obj) -> bytes:
    """Deterministic JSON bytes: sorted keys, compact separators, UTF-8."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")


def encode_rollout_body(request: RolloutRequest) -> dict:
    k = request.intrinsics
    return {
        "protocol": PROTOCOL_VERSION,
        "reference": base64.b64encode(request.reference.to_png_bytes()).decode("ascii"),
        "intrinsics": {"fx": k.fx, "fy": k.fy, "cx": k.cx, "cy": k.cy,
                       "w": k.width, "h": k.height},
        "pitch_deg": float(request.pitch_degrees),
        "poses": [
            {"R": [float(v) for v in pose.rotation.reshape(-1)],
             "t": [float(v) for v in pose.translation]}
            for pose in request.poses
        ],
    }


def _default_transport(method: str, url: str, body: bytes | None, timeout: float):
    try:
        if method == "GET":
            resp = requests.get(url, timeout=timeout)
        else:
            resp = requests.post(url, data=body, timeout=timeout,
                                 headers={"Content-Type": "application/json"})
        return resp.status_code, resp.content
    except requests.RequestException as exc:
        raise TransportError(f"{method} {url} failed: {exc}") from exc


class RemoteWorldModel:
    """Wire-protocol client for rollout services.

    ``transport`` is a callable ``(method, url, body_bytes, timeout) ->
    (status, body_bytes)`` raising :class:`TransportError` on network
    failure; the default uses ``requests``. One retry is attempted on
    transport faults. Concurrent in-flight requests are safe: the client
    holds no mutable state.
    """

    def __init__(self, endpoint: str, timeout: float = 60.0, transport=None):
        self.endpoint = endpoint.rstrip("/")
        self.timeout = timeout
        self._transport = transport or _default_transport

    @property
    def name(self) -> str:
        return f"remote:{self.endpoint}"

    def request_bytes(self, request: RolloutRequest) -> bytes:
        """The exact body bytes sent for ``request`` (exposed for golden tests)."""
        return canonical_json(encode_rollout_body(request))

    def _call(self, method: str, url: str, body: bytes | None):
        try:
            return self._transport(method, url, body, self.timeout)
        except TransportError:
            logger.warning("transport fault on %s %s; retrying once", method, url)
            return self._transport(method, url, body, self.timeout)

    def health(self) -> dict:
        status, body = self._call("GET", f"{self.endpoint}/v1/health", None)
        if status != 200:
            raise ProtocolError(f"health check returned status {status}")
        return json.loads(body)

    def rollout(self, request: RolloutRequest) -> list[Frame]:
        status, body = self._call("POST", f"{self.endpoint}/v1/rollout",
                                  self.request_bytes(request))
        if status != 200:
            try:
                error = json.loads(body).get("error", {})
            except (json.JSONDecodeError, AttributeError):
                error = {}
            code = error.get("code", "unknown")
            message = error.get("message", "")
            if status >= 500:
                raise TransportError(f"server error {status}: {code} {message}")
            raise ProtocolError(f"rejected ({status}): {code} {message}")
        try:
            doc = json.loads(body)
            encoded = doc["frames"]
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise ProtocolError(f"malformed rollout response: {exc}") from exc
        if len(encoded) != len(request.poses):
            raise ProtocolError(
                f"frame count {len(encoded)} != pose count {len(request.poses)}"
            )
        frames = []
        for i, b64 in enumerate(encoded):
            try:
                frame = Frame.from_png_bytes(base64.b64decode(b64))
            except Exception as exc:
                raise ProtocolError(f"frame {i} is not a decodable PNG: {exc}") from exc
            if (frame.width, frame.height) != (request.intrinsics.width,
                                               request.intrinsics.height):
                raise ValidationError(
                    f"frame {i} is {frame.width}x{frame.height}, expected "
                    f"{request.intrinsics.width}x{request.intrinsics.height}"
                )
            frames.append(frame)
        return frames

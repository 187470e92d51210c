"""Rollout backends: deterministic mocks plus the generator hook.

A backend is a callable ``(reference_b64, poses, intrinsics, pitch_deg)
-> list of base64 PNG frames`` where ``poses`` is the decoded wire list
of ``{"R": [9 floats], "t": [3 floats]}`` dicts. Backends are stateless
and safe under concurrent requests.
"""

from __future__ import annotations

import base64
import io
import math

import numpy as np
from PIL import Image


def decode_png_b64(data: str) -> np.ndarray:
    raw = base64.b64decode(data, validate=True)
    with Image.open(io.BytesIO(raw)) as img:
        return np.asarray(img.convert("RGB"), dtype=np.uint8)


def encode_png_b64(pixels: np.ndarray) -> str:
    buf = io.BytesIO()
    Image.fromarray(pixels, "RGB").save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def yaw_degrees(rotation_row_major: list[float]) -> float:
    """Net yaw encoded by a wire rotation matrix (rotation about -y)."""
    r = rotation_row_major
    return math.degrees(math.atan2(r[6], r[8]))


def mock_echo(reference_b64: str, poses: list[dict], intrinsics: dict,
              pitch_deg: float) -> list[str]:
    """The reference image back, once per pose, byte-identical."""
    return [reference_b64] * len(poses)


def mock_shift(reference_b64: str, poses: list[dict], intrinsics: dict,
               pitch_deg: float) -> list[str]:
    """Reference translated horizontally by 2 px per degree of net yaw.

    A left turn (positive yaw) scrolls content rightward, roughly how the
    view would move; it only needs to be deterministic and pose-dependent
    so clients can validate frame/pose correspondence.
    """
    pixels = decode_png_b64(reference_b64)
    frames = []
    for pose in poses:
        shift = int(round(2.0 * yaw_degrees(pose["R"])))
        frames.append(encode_png_b64(np.roll(pixels, shift, axis=1)))
    return frames


def load_hook(spec: str):
    """Resolve a ``module:attribute`` string to the user-supplied generator.

    The callable must accept ``(reference_b64, poses, intrinsics,
    pitch_deg)`` and return one base64 PNG per pose. This is where a
    pose-conditioned video-diffusion model gets mounted; none ships here.
    """
    module_name, _, attr = spec.partition(":")
    if not module_name or not attr:
        raise ValueError(f"hook spec must look like 'module:attribute', got {spec!r}")
    import importlib

    module = importlib.import_module(module_name)
    return getattr(module, attr)

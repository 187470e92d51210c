"""Golden request/response fixtures for protocol conformance testing.

The fixture pair is fully deterministic: a fixed 8x8 gradient reference,
three poses (one forward step, then two left turns), and the mock-echo
reply. Regenerating writes byte-identical files, and replaying the
request against a live mock-echo server returns exactly the recorded
response body.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from .backends import encode_png_b64, mock_echo
from .server import PROTOCOL_VERSION, build_rollout_response, canonical_json

REQUEST_NAME = "rollout_request.golden.json"
RESPONSE_NAME = "rollout_response.golden.json"


def _reference_pixels() -> np.ndarray:
    values = np.arange(8 * 8 * 3, dtype=np.uint64).astype(np.uint8)
    return values.reshape(8, 8, 3)


def _yaw_pose(degrees: float, translation: list[float]) -> dict:
    rad = math.radians(degrees)
    c, s = math.cos(rad), math.sin(rad)
    return {"R": [c, 0.0, -s, 0.0, 1.0, 0.0, s, 0.0, c], "t": translation}


def golden_request_body() -> bytes:
    reference = encode_png_b64(_reference_pixels())
    poses = [
        _yaw_pose(0.0, [0.0, 0.0, 0.25]),
        _yaw_pose(9.0, [0.0, 0.0, 0.25]),
        _yaw_pose(18.0, [0.0, 0.0, 0.25]),
    ]
    doc = {
        "protocol": PROTOCOL_VERSION,
        "reference": reference,
        "intrinsics": {"fx": 6.93, "fy": 6.93, "cx": 4.0, "cy": 4.0, "w": 8, "h": 8},
        "pitch_deg": 0.0,
        "poses": poses,
    }
    return canonical_json(doc)


def golden_response_body() -> bytes:
    import json

    doc = json.loads(golden_request_body())
    frames = mock_echo(doc["reference"], doc["poses"], doc["intrinsics"],
                       doc["pitch_deg"])
    return build_rollout_response(frames)


def golden_fixtures(out_dir: str | Path) -> list[Path]:
    """Write the canonical request/response pair; returns the paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    request_path = out_dir / REQUEST_NAME
    response_path = out_dir / RESPONSE_NAME
    request_path.write_bytes(golden_request_body())
    response_path.write_bytes(golden_response_body())
    return [request_path, response_path]

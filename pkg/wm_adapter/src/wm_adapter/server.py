"""HTTP server half of the adapter: request validation and dispatch.

Wire protocol:

* ``POST /v1/rollout``: JSON body ``{"protocol": 1, "reference":
  <base64 PNG>, "intrinsics": {fx, fy, cx, cy, w, h}, "pitch_deg": float,
  "poses": [{"R": [9 floats row-major], "t": [3 floats]}]}``; the reply
  is ``{"frames": [<base64 PNG>, ...]}`` with exactly one frame per pose.
* Schema violations get status 400 with ``{"error": {"code", "message"}}``
  (codes: protocol_version, bad_body, bad_reference, bad_intrinsics,
  bad_pose); configured limits get 413 (codes: too_many_poses,
  image_too_large).
* ``GET /v1/health`` returns ``{"status": "ok", "backend": <name>}``.

Responses are canonical JSON (sorted keys, compact separators), so a
recorded response replays byte-identically. Mock backends are stateless;
concurrent requests are safe.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass
from typing import Callable

from fastapi import FastAPI, Request, Response

from .backends import decode_png_b64, load_hook, mock_echo, mock_shift

BACKENDS = ("mock-echo", "mock-shift", "diffusion-hook")
PROTOCOL_VERSION = 1


def canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"),
                      ensure_ascii=False).encode("utf-8")


@dataclass
class AdapterConfig:
    host: str = "127.0.0.1"
    port: int = 8080
    backend: str = "mock-echo"
    max_poses: int = 32
    max_image_side: int = 1024
    hook: Callable | None = None

    def __post_init__(self) -> None:
        if self.backend not in BACKENDS:
            raise ValueError(f"backend must be one of {BACKENDS}, got {self.backend!r}")
        if self.max_poses < 1 or self.max_image_side < 1:
            raise ValueError("limits must be positive")
        if self.backend == "diffusion-hook" and self.hook is None:
            raise ValueError("diffusion-hook requires a generator callable "
                             "(reference_b64, poses, intrinsics, pitch_deg) -> frames")

    def resolve_backend(self) -> Callable:
        if self.backend == "mock-echo":
            return mock_echo
        if self.backend == "mock-shift":
            return mock_shift
        return self.hook


class _Reject(Exception):
    def __init__(self, status: int, code: str, message: str):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message


def _error_response(status: int, code: str, message: str) -> Response:
    body = canonical_json({"error": {"code": code, "message": message}})
    return Response(content=body, status_code=status, media_type="application/json")


_INTRINSIC_FIELDS = ("fx", "fy", "cx", "cy", "w", "h")


def validate_rollout_body(doc, config: AdapterConfig) -> dict:
    """Full schema check; raises _Reject with the wire error code."""
    if not isinstance(doc, dict):
        raise _Reject(400, "bad_body", "body must be a JSON object")
    if doc.get("protocol") != PROTOCOL_VERSION:
        raise _Reject(400, "protocol_version",
                      f"unsupported protocol {doc.get('protocol')!r}, expected "
                      f"{PROTOCOL_VERSION}")

    intrinsics = doc.get("intrinsics")
    if not isinstance(intrinsics, dict) or any(
            not isinstance(intrinsics.get(f), (int, float)) for f in _INTRINSIC_FIELDS):
        raise _Reject(400, "bad_intrinsics",
                      f"intrinsics must carry numeric {_INTRINSIC_FIELDS}")
    if intrinsics["w"] > config.max_image_side or intrinsics["h"] > config.max_image_side:
        raise _Reject(413, "image_too_large",
                      f"image side exceeds the configured limit {config.max_image_side}")

    poses = doc.get("poses")
    if not isinstance(poses, list) or not poses:
        raise _Reject(400, "bad_pose", "poses must be a non-empty list")
    if len(poses) > config.max_poses:
        raise _Reject(413, "too_many_poses",
                      f"{len(poses)} poses exceed the configured limit {config.max_poses}")
    for i, pose in enumerate(poses):
        if not isinstance(pose, dict):
            raise _Reject(400, "bad_pose", f"pose {i} must be an object")
        rotation = pose.get("R")
        translation = pose.get("t")
        if (not isinstance(rotation, list) or len(rotation) != 9
                or any(not isinstance(v, (int, float)) for v in rotation)):
            raise _Reject(400, "bad_pose", f"pose {i}: R must be 9 numbers row-major")
        if (not isinstance(translation, list) or len(translation) != 3
                or any(not isinstance(v, (int, float)) for v in translation)):
            raise _Reject(400, "bad_pose", f"pose {i}: t must be 3 numbers")

    reference = doc.get("reference")
    if not isinstance(reference, str):
        raise _Reject(400, "bad_reference", "reference must be a base64 PNG string")
    try:
        pixels = decode_png_b64(reference)
    except Exception as exc:
        raise _Reject(400, "bad_reference", f"reference does not decode: {exc}")
    if max(pixels.shape[0], pixels.shape[1]) > config.max_image_side:
        raise _Reject(413, "image_too_large",
                      f"reference exceeds the configured limit {config.max_image_side}")

    pitch = doc.get("pitch_deg", 0.0)
    if not isinstance(pitch, (int, float)):
        raise _Reject(400, "bad_body", "pitch_deg must be a number")
    return {"reference": reference, "poses": poses, "intrinsics": intrinsics,
            "pitch_deg": float(pitch)}


def build_rollout_response(frames: list[str]) -> bytes:
    return canonical_json({"frames": frames})


def create_app(config: AdapterConfig | None = None) -> FastAPI:
    config = config or AdapterConfig()
    backend = config.resolve_backend()
    app = FastAPI(title="wm-adapter", docs_url=None, redoc_url=None)

    @app.get("/v1/health")
    def health() -> Response:
        body = canonical_json({"status": "ok", "backend": config.backend})
        return Response(content=body, media_type="application/json")

    @app.post("/v1/rollout")
    async def rollout(request: Request) -> Response:
        try:
            doc = json.loads(await request.body())
        except json.JSONDecodeError as exc:
            return _error_response(400, "bad_body", f"invalid JSON: {exc}")
        try:
            fields = validate_rollout_body(doc, config)
        except _Reject as reject:
            return _error_response(reject.status, reject.code, reject.message)
        frames = backend(fields["reference"], fields["poses"], fields["intrinsics"],
                         fields["pitch_deg"])
        return Response(content=build_rollout_response(frames),
                        media_type="application/json")

    return app


def serve(config: AdapterConfig) -> None:
    """Run the service until interrupted."""
    import uvicorn

    uvicorn.run(create_app(config), host=config.host, port=config.port,
                log_level="warning")


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="wm-adapter",
                                     description="Rollout wire-protocol reference server")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8080)
    parser.add_argument("--backend", choices=BACKENDS, default="mock-echo")
    parser.add_argument("--hook", help="module:attribute generator for diffusion-hook")
    parser.add_argument("--max-poses", type=int, default=32)
    parser.add_argument("--max-image-side", type=int, default=1024)
    parser.add_argument("--fixtures", metavar="DIR",
                        help="write golden request/response fixtures to DIR and exit")
    args = parser.parse_args(argv)

    if args.fixtures:
        from .fixtures import golden_fixtures

        paths = golden_fixtures(args.fixtures)
        for path in paths:
            print(path)
        return 0

    hook = load_hook(args.hook) if args.hook else None
    try:
        config = AdapterConfig(host=args.host, port=args.port, backend=args.backend,
                               max_poses=args.max_poses,
                               max_image_side=args.max_image_side, hook=hook)
    except ValueError as exc:
        print(f"config fault: {exc}", file=sys.stderr)
        return 2
    serve(config)
    return 0


if __name__ == "__main__":
    sys.exit(main())

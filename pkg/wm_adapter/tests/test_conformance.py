"""Cross-package conformance: the spatialbeam remote client against a
live adapter server over real HTTP. This is the contract that lets the
search engine swap its built-in world model for this service."""

from __future__ import annotations

import threading
import time

import numpy as np
import pytest
import requests
import uvicorn

from spatialbeam.geometry import Intrinsics, Trajectory, cumulative_poses, move_forward, turn_left
from spatialbeam.worldmodel import Frame, RemoteWorldModel, RolloutRequest

from wm_adapter.server import AdapterConfig, create_app


@pytest.fixture(scope="module")
def live_endpoint():
    config = uvicorn.Config(create_app(AdapterConfig(backend="mock-echo")),
                            host="127.0.0.1", port=0, log_level="warning")
    server = uvicorn.Server(config)
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    deadline = time.time() + 10
    while not server.started:
        if time.time() > deadline:
            raise RuntimeError("adapter server did not start")
        time.sleep(0.02)
    port = server.servers[0].sockets[0].getsockname()[1]
    yield f"http://127.0.0.1:{port}"
    server.should_exit = True
    thread.join(timeout=5)


def make_request() -> RolloutRequest:
    k = Intrinsics.from_fov(16, 16)
    rng = np.random.default_rng(42)
    reference = Frame(rng.integers(0, 256, size=(16, 16, 3), dtype=np.uint8))
    traj = Trajectory((move_forward(0.25), turn_left(9.0), turn_left(9.0)))
    return RolloutRequest(reference, tuple(cumulative_poses(traj)), k)


def test_health_through_primary_client(live_endpoint):
    client = RemoteWorldModel(live_endpoint)
    assert client.health() == {"status": "ok", "backend": "mock-echo"}


def test_three_pose_rollout_frame_count_and_bytes(live_endpoint):
    client = RemoteWorldModel(live_endpoint)
    request = make_request()
    frames = client.rollout(request)
    assert len(frames) == 3
    for frame in frames:
        assert frame.same_pixels(request.reference)

    # Byte-level check below the client: the echoed base64 payload is the
    # reference payload, untouched.
    import base64
    import json

    raw = requests.post(f"{live_endpoint}/v1/rollout",
                        data=client.request_bytes(request),
                        headers={"Content-Type": "application/json"}, timeout=10)
    reference_b64 = base64.b64encode(request.reference.to_png_bytes()).decode()
    assert raw.json()["frames"] == [reference_b64] * 3


def test_consecutive_rollouts_identical(live_endpoint):
    client = RemoteWorldModel(live_endpoint)
    request = make_request()
    first = client.rollout(request)
    second = client.rollout(request)
    for a, b in zip(first, second):
        assert a.same_pixels(b)

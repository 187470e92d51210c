"""Shared fixtures and backend stubs for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from spatialbeam.geometry import Intrinsics
from spatialbeam.scoring import Question, ScorePair
from spatialbeam.search import SearchConfig
from spatialbeam.worldmodel import Frame, Scene, SceneObject


@pytest.fixture
def cfg() -> SearchConfig:
    return SearchConfig()


@pytest.fixture
def k64() -> Intrinsics:
    return Intrinsics.from_fov(64, 64)


@pytest.fixture
def k32() -> Intrinsics:
    return Intrinsics.from_fov(32, 32)


@pytest.fixture
def question() -> Question:
    return Question(
        question_id="q1",
        image_ref="scene.scene.json",
        text="Which colored object is hidden behind the large gray box?",
        choices=("red", "green", "blue", "yellow"),
        answer_index=0,
    )


@pytest.fixture
def box_scene() -> Scene:
    """A unit box two meters straight ahead."""
    return Scene(objects=(
        SceneObject("box", "box", center=(0.0, 0.0, 2.0), size=(1.0, 1.0, 1.0),
                    color=(200, 40, 40)),
    ))


def blank_frame(size: int = 8, value: int = 0) -> Frame:
    return Frame(np.full((size, size, 3), value, dtype=np.uint8))


class StubWorld:
    """Returns a fixed blank frame per pose; counts calls."""

    name = "stub-world"

    def __init__(self, size: int = 8):
        self.size = size
        self.calls = 0

    def rollout(self, request):
        self.calls += 1
        return [blank_frame(self.size) for _ in request.poses]


class ConstantScorer:
    """Always returns the same pair; stateless by construction."""

    name = "constant-scorer"

    def __init__(self, s_exp: int = 10, s_help: int = 10):
        self.pair = ScorePair(s_exp, s_help)

    def score(self, question, trajectory, description, frame):
        return self.pair


class TableScorer:
    """Scores looked up by trajectory string; any miss gets the default."""

    name = "table-scorer"

    def __init__(self, table: dict[str, tuple[int, int]], default=(0, 0)):
        self.table = table
        self.default = default

    def score(self, question, trajectory, description, frame):
        from spatialbeam.search import trajectory_string

        s_exp, s_help = self.table.get(trajectory_string(trajectory), self.default)
        return ScorePair(s_exp, s_help)


class HashScorer:
    """Deterministic pseudo-random scores derived from the trajectory string."""

    name = "hash-scorer"

    def __init__(self, salt: int = 0):
        self.salt = salt

    def score(self, question, trajectory, description, frame):
        from spatialbeam.search import trajectory_string

        import zlib

        h = zlib.crc32(f"{self.salt}:{trajectory_string(trajectory)}".encode())
        return ScorePair(h % 11, (h >> 8) % 11)


class CapturingAnswerer:
    """Records the payload it was handed and answers with a fixed index."""

    name = "capturing-answerer"

    def __init__(self, index: int = 0):
        self.index = index
        self.calls: list[dict] = []

    def answer(self, question, reference, evidence):
        self.calls.append({
            "question": question,
            "reference": reference,
            "evidence": list(evidence),
        })
        return self.index, f"Answer: {'ABCDE'[self.index]}"

"""Scorers and answerers: geometric oracles and a remote chat client.

A scorer rates one candidate view against the question on two integer
0-10 scales ("keep exploring?" and "does this view answer it now?"); an
answerer picks one multiple-choice option given the reference view plus
gathered evidence views. Both exist in two flavors:

* oracle implementations computed from scene geometry (deterministic,
  used for verification and the synthetic benchmark);
* remote implementations speaking the standard chat-completions wire
  shape with image parts, carrying editable prompt templates.

Scorer and answerer handles are stateless across calls and sharable
between threads. The remote client applies a per-request timeout and one
retry on transport faults.
"""

from __future__ import annotations

import base64
import json
import math
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import requests

from .geometry import CameraPose, Intrinsics, Trajectory, compose, cumulative_poses, pitch_rotation
from .worldmodel import Frame, Scene, visibility

API_KEY_ENV = "SPATIAL_BEAM_API_KEY"

SCORE_MIN = 0
SCORE_MAX = 10

# Question tags used by the benchmark tables; anything else maps to "other".
CANONICAL_CATEGORIES = ("EgoM", "ObjM", "EgoAct", "GoalAim", "Pers")

TEMPLATE_NAMES = ("baseline_qa.txt", "search_score.txt", "mindjourney_qa.txt")

_CHOICE_LETTERS = "ABCDE"


class ScoringError(Exception):
    """Base class for scorer/answerer faults."""


class ScoreParseError(ScoringError):
    """The backend reply did not contain both score markers."""


class ChoiceParseError(ScoringError):
    """The backend reply did not contain a usable choice letter."""


class RemoteScoringError(ScoringError):
    """The chat endpoint could not be reached or replied malformed."""


@dataclass(frozen=True)
class Question:
    """One multiple-choice spatial query."""

    question_id: str
    image_ref: str
    text: str
    choices: tuple[str, ...]
    answer_index: int | None = None
    category: str = "other"
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "choices", tuple(str(c) for c in self.choices))
        if not (2 <= len(self.choices) <= 5):
            raise ValueError(f"need 2..5 choices, got {len(self.choices)}")
        if self.answer_index is not None and not (0 <= self.answer_index < len(self.choices)):
            raise ValueError(f"answer index {self.answer_index} out of range")

    def lettered_choices(self) -> str:
        return "\n".join(f"{_CHOICE_LETTERS[i]}. {text}" for i, text in enumerate(self.choices))


@dataclass(frozen=True)
class ScorePair:
    """The two integer ratings for one candidate view, plus the raw reply."""

    s_exp: int
    s_help: int
    raw: str = ""

    def __post_init__(self) -> None:
        for name, value in (("s_exp", self.s_exp), ("s_help", self.s_help)):
            if not (SCORE_MIN <= value <= SCORE_MAX):
                raise ValueError(f"{name}={value} outside [{SCORE_MIN}, {SCORE_MAX}]")


def format_scores(s_exp: int, s_help: int) -> str:
    """Canonical reply format that :func:`parse_scores` inverts."""
    return f"exploration: {s_exp}\nhelpful: {s_help}"


def _first_int_after(marker: str, text: str) -> int:
    match = re.search(marker + r"[^0-9+-]*([+-]?\d+)", text, re.IGNORECASE)
    if match is None:
        raise ScoreParseError(f"no integer after marker {marker!r} in {text!r}")
    return int(match.group(1))


def parse_scores(text: str) -> ScorePair:
    """Extract the first integers after "exploration" and "helpful", clamped to 0-10."""
    s_exp = _first_int_after("exploration", text)
    s_help = _first_int_after("helpful", text)
    clamp = lambda v: max(SCORE_MIN, min(SCORE_MAX, v))
    return ScorePair(clamp(s_exp), clamp(s_help), raw=text)


def parse_choice_letter(text: str, n_choices: int) -> int:
    """Pick the answer letter out of free-form text; the last match wins.

    Accepts A-E case-insensitively with optional surrounding parentheses,
    brackets or punctuation; a letter beyond the available choices is a
    parse fault, not a clamp.
    """
    matches = re.findall(r"(?<![A-Za-z])[\(\[]?([A-Ea-e])[\)\]\.\:,]?(?![A-Za-z])", text)
    if not matches:
        raise ChoiceParseError(f"no choice letter in {text!r}")
    index = _CHOICE_LETTERS.index(matches[-1].upper())
    if index >= n_choices:
        raise ChoiceParseError(f"letter {matches[-1]!r} beyond {n_choices} choices")
    return index


def _round_half_up(value: float) -> int:
    return int(math.floor(value + 0.5))


@dataclass(frozen=True)
class OracleSpec:
    """Ground-truth scoring parameters for one synthetic question.

    ``visibility_threshold_help`` is the visible-pixel fraction at which a
    view counts as fully helpful. ``proximity_weight`` optionally biases
    the exploration score toward poses closer to the target (0 disables
    it, keeping the score a pure bearing-alignment measure).
    """

    target_object_id: str
    visibility_threshold_help: float = 0.02
    proximity_weight: float = 0.0

    def __post_init__(self) -> None:
        if not (0.0 < self.visibility_threshold_help <= 1.0):
            raise ValueError("visibility threshold must be in (0, 1]")
        if self.proximity_weight < 0.0:
            raise ValueError("proximity weight must be >= 0")


def oracle_score(
    spec: OracleSpec,
    scene: Scene,
    pose: CameraPose,
    intrinsics: Intrinsics,
    question: Question | None = None,
) -> ScorePair:
    """Deterministic scores from scene geometry.

    s_help = round(10 * min(1, visibility / threshold)); s_exp =
    round(10 * alignment * proximity^w) where alignment is the cosine of
    the bearing between the camera's forward axis and the target, clamped
    to [0, 1], and proximity = 1 / (1 + distance).
    """
    target = scene.objects[scene.index_of(spec.target_object_id)]
    vis = visibility(scene, pose, intrinsics, spec.target_object_id)
    s_help = _round_half_up(10.0 * min(1.0, vis / spec.visibility_threshold_help))

    to_target = np.asarray(target.center) - pose.translation
    distance = float(np.linalg.norm(to_target))
    if distance < 1e-9:
        alignment = 1.0
    else:
        alignment = float(np.clip(pose.forward_axis() @ (to_target / distance), 0.0, 1.0))
    proximity = 1.0 / (1.0 + distance)
    s_exp = _round_half_up(10.0 * alignment * proximity**spec.proximity_weight)
    return ScorePair(s_exp, s_help, raw=format_scores(s_exp, s_help))


class OracleScorer:
    """Engine-facing scorer backed by :func:`oracle_score`.

    The engine hands over the candidate trajectory alongside the frame;
    the oracle derives the camera pose from it and ignores the pixels.
    """

    def __init__(self, spec: OracleSpec, scene: Scene, intrinsics: Intrinsics,
                 pitch_degrees: float = 0.0):
        self.spec = spec
        self.scene = scene
        self.intrinsics = intrinsics
        self.pitch_degrees = pitch_degrees

    @property
    def name(self) -> str:
        return f"oracle-scorer:{self.spec.target_object_id}"

    def _pose_of(self, trajectory: Trajectory) -> CameraPose:
        poses = cumulative_poses(trajectory)
        pose = poses[-1] if poses else CameraPose.identity()
        if self.pitch_degrees != 0.0:
            # Local tilt after horizontal motion, matching the world model.
            pose = compose(pose, pitch_rotation(self.pitch_degrees))
        return pose

    def score(self, question: Question, trajectory: Trajectory, description: str,
              frame: Frame) -> ScorePair:
        return oracle_score(self.spec, self.scene, self._pose_of(trajectory),
                            self.intrinsics, question)


@dataclass(frozen=True)
class AnswerEvidence:
    """One evidence view as the answer stage sees it.

    ``description`` is None when trajectory descriptions are disabled.
    """

    trajectory: Trajectory
    frame: Frame
    description: str | None


class OracleAnswerer:
    """Answers correctly iff some evidence pose actually reveals the target.

    Without revealing evidence it returns the generator-designated wrong
    default, which makes the benefit of search directly measurable.
    """

    def __init__(self, spec: OracleSpec, scene: Scene, intrinsics: Intrinsics,
                 correct_index: int, wrong_default_index: int, pitch_degrees: float = 0.0):
        self.spec = spec
        self.scene = scene
        self.intrinsics = intrinsics
        self.correct_index = correct_index
        self.wrong_default_index = wrong_default_index
        self.pitch_degrees = pitch_degrees

    @property
    def name(self) -> str:
        return f"oracle-answerer:{self.spec.target_object_id}"

    def answer(self, question: Question, reference: Frame,
               evidence: list[AnswerEvidence]) -> tuple[int, str]:
        for item in evidence:
            poses = cumulative_poses(item.trajectory)
            pose = poses[-1] if poses else CameraPose.identity()
            if self.pitch_degrees != 0.0:
                pose = compose(pose, pitch_rotation(self.pitch_degrees))
            vis = visibility(self.scene, pose, self.intrinsics, self.spec.target_object_id)
            if vis >= self.spec.visibility_threshold_help:
                return self.correct_index, f"oracle: target revealed (visibility {vis:.4f})"
        return self.wrong_default_index, "oracle: no revealing evidence"


def load_template(name: str, template_dir: str | Path | None = None) -> str:
    """Load a prompt template; an override directory takes precedence."""
    if name not in TEMPLATE_NAMES:
        raise ValueError(f"unknown template {name!r}; known: {TEMPLATE_NAMES}")
    if template_dir is not None:
        override = Path(template_dir) / name
        if override.exists():
            return override.read_text(encoding="utf-8")
    return resources.files("spatialbeam.templates").joinpath(name).read_text(encoding="utf-8")


def _image_part(frame: Frame) -> dict:
    b64 = base64.b64encode(frame.to_png_bytes()).decode("ascii")
    return {"type": "image_url", "image_url": {"url": f"data:image/png;base64,{b64}"}}


def _text_part(text: str) -> dict:
    return {"type": "text", "text": text}


def _default_chat_transport(url: str, headers: dict, payload: dict, timeout: float):
    try:
        resp = requests.post(url, json=payload, headers=headers, timeout=timeout)
        return resp.status_code, resp.content
    except requests.RequestException as exc:
        raise RemoteScoringError(f"POST {url} failed: {exc}") from exc


class RemoteChatClient:
    """Minimal chat-completions client with image parts.

    ``transport`` is ``(url, headers, payload, timeout) -> (status, body)``
    raising :class:`RemoteScoringError` on network failure; the default
    uses ``requests``. The bearer token comes from the environment
    variable named by :data:`API_KEY_ENV` unless given explicitly.
    ``max_concurrent`` bounds simultaneous in-flight requests.
    """

    def __init__(self, base_url: str, model: str, api_key: str | None = None,
                 timeout: float = 60.0, transport=None, max_concurrent: int = 4):
        import os
        import threading

        self.base_url = base_url.rstrip("/")
        self.model = model
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV, "")
        self.timeout = timeout
        self._transport = transport or _default_chat_transport
        self._slots = threading.BoundedSemaphore(max_concurrent)

    def complete(self, content_parts: list[dict]) -> str:
        url = f"{self.base_url}/chat/completions"
        headers = {"Authorization": f"Bearer {self.api_key}"}
        payload = {
            "model": self.model,
            "messages": [{"role": "user", "content": content_parts}],
            "temperature": 0,
        }
        with self._slots:
            try:
                status, body = self._transport(url, headers, payload, self.timeout)
            except RemoteScoringError:
                status, body = self._transport(url, headers, payload, self.timeout)
        if status != 200:
            raise RemoteScoringError(f"chat endpoint returned status {status}")
        try:
            doc = json.loads(body)
            return doc["choices"][0]["message"]["content"]
        except (json.JSONDecodeError, KeyError, IndexError, TypeError) as exc:
            raise RemoteScoringError(f"malformed chat response: {exc}") from exc


class RemoteScorer:
    """Scores one candidate view per call through the chat endpoint.

    Both ratings are elicited in a single combined call; the reply
    contract is only the two markers and the 0-10 integer scale, so the
    template text is freely editable.
    """

    def __init__(self, client: RemoteChatClient, template: str | None = None,
                 template_dir: str | Path | None = None):
        self.client = client
        self.template = template if template is not None else load_template(
            "search_score.txt", template_dir)

    @property
    def name(self) -> str:
        return f"remote-scorer:{self.client.model}"

    def score(self, question: Question, trajectory: Trajectory, description: str,
              frame: Frame) -> ScorePair:
        prompt = self.template.format(
            question=question.text,
            choices=question.lettered_choices(),
            description=description,
        )
        reply = self.client.complete([_text_part(prompt), _image_part(frame)])
        return parse_scores(reply)


def remote_answer(
    client: RemoteChatClient,
    question: Question,
    reference: Frame,
    evidence: list[AnswerEvidence],
    qa_template: str,
    baseline_template: str,
) -> tuple[int, str]:
    """One answer call: question text, reference image, then evidence views.

    Empty evidence falls back to plain reference-only question answering.
    Retries once if the reply has no usable letter, then faults.
    """
    template = qa_template if evidence else baseline_template
    prompt = template.format(question=question.text, choices=question.lettered_choices())
    parts = [_text_part(prompt), _image_part(reference)]
    for i, item in enumerate(evidence, start=1):
        if item.description is not None:
            parts.append(_text_part(f"View {i}, reached by: {item.description}"))
        parts.append(_image_part(item.frame))

    reply = client.complete(parts)
    try:
        return parse_choice_letter(reply, len(question.choices)), reply
    except ChoiceParseError:
        reply = client.complete(parts)
        return parse_choice_letter(reply, len(question.choices)), reply


class RemoteAnswerer:
    """Answer handle around :func:`remote_answer` with loaded templates."""

    def __init__(self, client: RemoteChatClient, template_dir: str | Path | None = None):
        self.client = client
        self.qa_template = load_template("mindjourney_qa.txt", template_dir)
        self.baseline_template = load_template("baseline_qa.txt", template_dir)

    @property
    def name(self) -> str:
        return f"remote-answerer:{self.client.model}"

    def answer(self, question: Question, reference: Frame,
               evidence: list[AnswerEvidence]) -> tuple[int, str]:
        return remote_answer(self.client, question, reference, evidence,
                             self.qa_template, self.baseline_template)

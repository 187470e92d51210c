"""The beam-search engine over egocentric action trajectories.

Each step expands every beam node by appending up to ``k`` consecutive
repetitions of each primitive action, prunes immediate reversals and
budget violations, renders the survivors through the world model in
batched per-action rollouts, scores every (trajectory, frame) pair on
the exploration and helpfulness scales, then keeps the top-B by
exploration as the next beam and caches the top-H by helpfulness as
answer evidence.

The engine is a single logical thread of control per search; backend
calls within a step are independent and results are merged in expansion
enumeration order, so outcomes do not depend on call scheduling. Two
searches never share mutable state.

Trace lines, evidence sets and answer records serialize to canonical
JSON (sorted keys, compact separators) so identical runs are
byte-identical.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

from .geometry import (
    ACTION_LETTER,
    LETTER_ACTION,
    Action,
    ActionKind,
    Intrinsics,
    Trajectory,
    cumulative_poses,
)
from .scoring import AnswerEvidence, Question, ScorePair, ScoringError
from .worldmodel import Frame, RolloutRequest, WorldModelError

ACTION_ORDER = (ActionKind.MOVE_FORWARD, ActionKind.TURN_LEFT, ActionKind.TURN_RIGHT)

_REVERSALS = {
    (ActionKind.TURN_LEFT, ActionKind.TURN_RIGHT),
    (ActionKind.TURN_RIGHT, ActionKind.TURN_LEFT),
}


class SearchFault(Exception):
    """An unrecoverable backend failure; carries the partial trace."""

    def __init__(self, message: str, trace: "SearchTrace"):
        super().__init__(message)
        self.trace = trace


@dataclass(frozen=True)
class SearchConfig:
    """Knobs of one search run.

    Scores are integers on the 0-10 scale; a threshold above 10 is legal
    and simply unsatisfiable. Budget comparisons are inclusive. The
    rotation budget bounds the absolute net signed yaw, not the total
    turned angle, so full back-and-forth scans stay available while
    drift is bounded.
    """

    n: int = 3
    k: int = 3
    beam_width: int = 2
    helpful_per_step: int = 2
    gamma_exp: float = 8.0
    gamma_help: float = 8.0
    max_traj_len: int = 8
    forward_step: float = 0.25
    turn_step: float = 9.0
    rotation_budget: float = 90.0
    translation_budget: float = 2.0
    evidence_cap: int = 8
    include_descriptions: bool = True

    def __post_init__(self) -> None:
        if self.n < 1 or self.k < 1 or self.beam_width < 1 or self.helpful_per_step < 1:
            raise ValueError("n, k, beam width and helpful cache size must be >= 1")
        if self.max_traj_len < 1 or self.evidence_cap < 1:
            raise ValueError("max trajectory length and evidence cap must be >= 1")
        for name in ("forward_step", "turn_step", "rotation_budget", "translation_budget"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.gamma_exp < 0 or self.gamma_help < 0:
            raise ValueError("thresholds must be >= 0")


@dataclass(frozen=True)
class BeamNode:
    """A frontier trajectory; the root has no rendered frame."""

    trajectory: Trajectory
    frame_id: str | None
    depth: int


@dataclass(frozen=True)
class Candidate:
    """A parent trajectory extended by ``repetitions`` copies of one action."""

    parent: Trajectory
    appended_action: Action
    repetitions: int
    full_trajectory: Trajectory


@dataclass(frozen=True)
class ScoredObservation:
    trajectory: Trajectory
    frame: Frame
    description: str
    s_exp: int
    s_help: int


@dataclass(frozen=True)
class EvidenceItem:
    trajectory: Trajectory
    frame: Frame
    description: str
    s_help: int
    step_found: int


@dataclass(frozen=True)
class EvidenceSet:
    """Helpful views in discovery order, after the global cap."""

    items: tuple[EvidenceItem, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "items", tuple(self.items))

    def __len__(self) -> int:
        return len(self.items)

    def __iter__(self):
        return iter(self.items)

    def to_json_dict(self) -> dict:
        return {
            "items": [
                {
                    "trajectory": trajectory_string(item.trajectory),
                    "description": item.description,
                    "s_help": item.s_help,
                    "step_found": item.step_found,
                }
                for item in self.items
            ]
        }


@dataclass(frozen=True)
class AnswerRecord:
    """Outcome of the answer stage for one question."""

    question_id: str
    chosen_index: int | None
    raw_response: str
    answered: bool
    evidence: EvidenceSet
    include_descriptions: bool

    def to_json_dict(self) -> dict:
        return {
            "question_id": self.question_id,
            "chosen_index": self.chosen_index,
            "raw_response": self.raw_response,
            "answered": self.answered,
            "include_descriptions": self.include_descriptions,
            "evidence": self.evidence.to_json_dict(),
        }


class SearchTrace:
    """Append-only event log; every generated candidate appears exactly once."""

    def __init__(self) -> None:
        self.events: list[dict] = []

    def add(self, event: str, step: int, **fields) -> None:
        entry = {"event": event, "step": step}
        entry.update(fields)
        self.events.append(entry)

    def to_jsonl(self) -> str:
        return "".join(
            json.dumps(e, sort_keys=True, separators=(",", ":")) + "\n" for e in self.events
        )

    def candidate_dispositions(self) -> list[tuple[str, str]]:
        return [(e["trajectory"], e["disposition"]) for e in self.events if e["event"] == "candidate"]

    def scored_trajectories(self) -> set[str]:
        return {e["trajectory"] for e in self.events if e["event"] == "scored"}

    def beam_sizes(self) -> list[int]:
        return [len(e["selected"]) for e in self.events if e["event"] == "beam"]

    def rollout_count(self) -> int:
        return sum(1 for e in self.events if e["event"] == "rollout")

    @property
    def terminal_cause(self) -> str | None:
        for e in reversed(self.events):
            if e["event"] == "terminal":
                return e["cause"]
        return None


def trajectory_string(trajectory: Trajectory) -> str:
    """Compact form like "F0.25|L9|L9|R9"; the empty trajectory is ""."""
    return "|".join(f"{ACTION_LETTER[a.kind]}{a.magnitude:g}" for a in trajectory)


def parse_trajectory(text: str) -> Trajectory:
    text = text.strip()
    if not text:
        return Trajectory()
    actions = []
    for token in text.split("|"):
        token = token.strip()
        if not token or token[0].upper() not in LETTER_ACTION:
            raise ValueError(f"bad trajectory token {token!r}")
        try:
            magnitude = float(token[1:])
        except ValueError as exc:
            raise ValueError(f"bad trajectory token {token!r}") from exc
        actions.append(Action(LETTER_ACTION[token[0].upper()], magnitude))
    return Trajectory(tuple(actions))


def is_reversal(trajectory: Trajectory, action: Action) -> bool:
    """True iff ``action`` immediately undoes the trajectory's last turn.

    Forward moves never reverse anything: the action set has no backward
    move.
    """
    last = trajectory.last
    return last is not None and (last.kind, action.kind) in _REVERSALS


def within_budget(trajectory: Trajectory, cfg: SearchConfig) -> bool:
    """Length, total forward translation and |net yaw| checks, all inclusive."""
    return (
        len(trajectory) <= cfg.max_traj_len
        and trajectory.forward_meters() <= cfg.translation_budget
        and abs(trajectory.net_yaw_degrees()) <= cfg.rotation_budget
    )


def _action_for(kind: ActionKind, cfg: SearchConfig) -> Action:
    magnitude = cfg.forward_step if kind is ActionKind.MOVE_FORWARD else cfg.turn_step
    return Action(kind, magnitude)


def enumerate_expansion(node: BeamNode, cfg: SearchConfig) -> list[tuple[Candidate, str]]:
    """All 3k (action, repetition) extensions with their dispositions.

    Enumeration order is the engine-wide tie-break order: actions in
    forward/left/right order, repetitions ascending. Dispositions are
    "kept", "pruned:reversal" or "pruned:budget".
    """
    rows: list[tuple[Candidate, str]] = []
    for kind in ACTION_ORDER:
        action = _action_for(kind, cfg)
        reverses = is_reversal(node.trajectory, action)
        for reps in range(1, cfg.k + 1):
            full = node.trajectory.extend(action, reps)
            candidate = Candidate(node.trajectory, action, reps, full)
            if reverses:
                rows.append((candidate, "pruned:reversal"))
            elif not within_budget(full, cfg):
                rows.append((candidate, "pruned:budget"))
            else:
                rows.append((candidate, "kept"))
    return rows


def expand(node: BeamNode, cfg: SearchConfig) -> list[Candidate]:
    """Surviving candidates of one node, in enumeration order."""
    return [c for c, disposition in enumerate_expansion(node, cfg) if disposition == "kept"]


@dataclass(frozen=True)
class RolloutPlan:
    """One batched world-model call covering every surviving repetition
    of a single appended action; repetition r maps to frame index r - 1."""

    action: Action
    trajectory: Trajectory
    parent_length: int
    frame_index_for_repetition: dict[int, int]
    candidates: tuple[Candidate, ...]

    def request(self, reference: Frame, intrinsics: Intrinsics,
                pitch_degrees: float = 0.0) -> RolloutRequest:
        poses = cumulative_poses(self.trajectory)[self.parent_length:]
        return RolloutRequest(reference=reference, poses=tuple(poses),
                              intrinsics=intrinsics, pitch_degrees=pitch_degrees)


def plan_rollouts(candidates: list[Candidate], cfg: SearchConfig) -> list[RolloutPlan]:
    """Group same-parent candidates by appended action into batched rollouts.

    Each group rolls out once at its deepest surviving repetition; every
    shallower survivor reads its frame from the matching prefix index.
    """
    if not candidates:
        return []
    parent = candidates[0].parent
    for c in candidates:
        if c.parent is not parent and c.parent != parent:
            raise ValueError("plan_rollouts expects candidates sharing one parent")
    plans = []
    for kind in ACTION_ORDER:
        group = [c for c in candidates if c.appended_action.kind is kind]
        if not group:
            continue
        r_max = max(c.repetitions for c in group)
        plans.append(RolloutPlan(
            action=group[0].appended_action,
            trajectory=parent.extend(group[0].appended_action, r_max),
            parent_length=len(parent),
            frame_index_for_repetition={c.repetitions: c.repetitions - 1 for c in group},
            candidates=tuple(group),
        ))
    return plans


def describe(trajectory: Trajectory, cfg: SearchConfig | None = None) -> str:
    """Natural-language movement summary; maximal same-kind runs are merged."""
    if not trajectory:
        return "stay at the initial view"
    clauses = []
    run_kind: ActionKind | None = None
    run_total = 0.0
    phrases = {
        ActionKind.MOVE_FORWARD: lambda m: f"move forward {m:g} m",
        ActionKind.TURN_LEFT: lambda m: f"turn left {m:g}\N{DEGREE SIGN}",
        ActionKind.TURN_RIGHT: lambda m: f"turn right {m:g}\N{DEGREE SIGN}",
    }
    for action in trajectory:
        if action.kind is run_kind:
            run_total += action.magnitude
        else:
            if run_kind is not None:
                clauses.append(phrases[run_kind](run_total))
            run_kind = action.kind
            run_total = action.magnitude
    clauses.append(phrases[run_kind](run_total))
    return ", then ".join(clauses)


@dataclass
class SearchState:
    """Mutable search position between steps; ``frames`` maps frame ids
    (trajectory strings) to rendered frames and ``visited`` holds every
    trajectory already scored in this search."""

    beam: list[BeamNode]
    evidence: list[EvidenceItem]
    step: int
    trace: SearchTrace
    frames: dict[str, Frame]
    reference: Frame
    intrinsics: Intrinsics
    pitch_degrees: float = 0.0
    terminal: str | None = None
    visited: set[str] = field(default_factory=set)


def initial_state(reference: Frame, intrinsics: Intrinsics,
                  pitch_degrees: float = 0.0) -> SearchState:
    root = BeamNode(Trajectory(), None, 0)
    return SearchState(beam=[root], evidence=[], step=0, trace=SearchTrace(),
                       frames={}, reference=reference, intrinsics=intrinsics,
                       pitch_degrees=pitch_degrees)


def _threshold_top(indexed_scores: list[tuple[int, float]], threshold: float,
                   limit: int) -> list[int]:
    """Indices of the top ``limit`` entries at or above ``threshold``.

    Selection depends on scores only through the threshold test and rank;
    ties keep the earlier index, so shifting every score and the
    threshold by a constant never changes the outcome.
    """
    passing = [(score, i) for i, score in indexed_scores if score >= threshold]
    passing.sort(key=lambda pair: (-pair[0], pair[1]))
    return [i for _, i in passing[:limit]]


def beam_step(state: SearchState, world, scorer, question: Question,
              cfg: SearchConfig) -> SearchState:
    """One expand / rollout / score / select round.

    A world-model fault aborts the step: prior evidence is preserved, the
    fault is traced, and the search terminates. A scorer fault zeroes
    that candidate's scores and is traced.
    """
    step = state.step + 1
    trace = state.trace
    frames = dict(state.frames)
    evidence = list(state.evidence)
    visited = set(state.visited)

    pairs: list[tuple[Candidate, Frame]] = []
    for node in state.beam:
        rows = enumerate_expansion(node, cfg)
        # Beam nodes can be same-action extensions of each other, so the
        # same full trajectory may be generated more than once (within a
        # step or across steps); the observation set is a union, so only
        # the first occurrence is rolled out and scored.
        deduped = []
        for candidate, disposition in rows:
            key = trajectory_string(candidate.full_trajectory)
            if disposition == "kept":
                if key in visited:
                    disposition = "pruned:duplicate"
                else:
                    visited.add(key)
            deduped.append((candidate, disposition))
        rows = deduped
        trace.add("expand", step, parent=trajectory_string(node.trajectory),
                  generated=len(rows))
        for candidate, disposition in rows:
            trace.add("candidate", step,
                      trajectory=trajectory_string(candidate.full_trajectory),
                      disposition=disposition)
        kept = [c for c, d in rows if d == "kept"]
        frame_of: dict[str, Frame] = {}
        for plan in plan_rollouts(kept, cfg):
            request = plan.request(state.reference, state.intrinsics, state.pitch_degrees)
            try:
                rendered = world.rollout(request)
            except WorldModelError as exc:
                trace.add("fault", step, source="world_model",
                          trajectory=trajectory_string(plan.trajectory), message=str(exc))
                trace.add("terminal", step, cause="world_model_fault")
                return replace(state, beam=[], evidence=evidence, step=step,
                               frames=frames, visited=visited,
                               terminal="world_model_fault")
            trace.add("rollout", step, trajectory=trajectory_string(plan.trajectory),
                      frames=len(rendered))
            for candidate in plan.candidates:
                frame_of[trajectory_string(candidate.full_trajectory)] = rendered[
                    plan.frame_index_for_repetition[candidate.repetitions]
                ]
        pairs.extend((c, frame_of[trajectory_string(c.full_trajectory)]) for c in kept)

    observations: list[ScoredObservation] = []
    for candidate, frame in pairs:
        description = describe(candidate.full_trajectory, cfg)
        try:
            scores: ScorePair = scorer.score(question, candidate.full_trajectory,
                                             description, frame)
            s_exp, s_help = scores.s_exp, scores.s_help
        except ScoringError as exc:
            trace.add("fault", step, source="scorer",
                      trajectory=trajectory_string(candidate.full_trajectory),
                      message=str(exc))
            s_exp, s_help = 0, 0
        trace.add("scored", step, trajectory=trajectory_string(candidate.full_trajectory),
                  s_exp=s_exp, s_help=s_help)
        observations.append(ScoredObservation(candidate.full_trajectory, frame,
                                              description, s_exp, s_help))

    exp_scores = [(i, float(o.s_exp)) for i, o in enumerate(observations)]
    help_scores = [(i, float(o.s_help)) for i, o in enumerate(observations)]
    beam_indices = _threshold_top(exp_scores, cfg.gamma_exp, cfg.beam_width)
    evidence_indices = _threshold_top(help_scores, cfg.gamma_help, cfg.helpful_per_step)

    next_beam = []
    for i in beam_indices:
        obs = observations[i]
        frame_id = trajectory_string(obs.trajectory)
        frames[frame_id] = obs.frame
        next_beam.append(BeamNode(obs.trajectory, frame_id, step))
    trace.add("beam", step, selected=[trajectory_string(observations[i].trajectory)
                                      for i in beam_indices])

    for i in evidence_indices:
        obs = observations[i]
        frames[trajectory_string(obs.trajectory)] = obs.frame
        evidence.append(EvidenceItem(obs.trajectory, obs.frame, obs.description,
                                     obs.s_help, step))
        trace.add("evidence", step, trajectory=trajectory_string(obs.trajectory),
                  s_help=obs.s_help)

    return replace(state, beam=next_beam, evidence=evidence, step=step, frames=frames,
                   visited=visited)


def _cap_evidence(evidence: list[EvidenceItem], cap: int) -> EvidenceSet:
    # Global cap keeps the best helpfulness scores (ties by discovery
    # order) but presents survivors in discovery order.
    ranked = sorted(range(len(evidence)), key=lambda i: (-evidence[i].s_help, i))[:cap]
    return EvidenceSet(tuple(evidence[i] for i in sorted(ranked)))


def spatial_beam_search(reference: Frame, question: Question, world, scorer,
                        cfg: SearchConfig,
                        intrinsics: Intrinsics | None = None,
                        pitch_degrees: float = 0.0) -> tuple[EvidenceSet, SearchTrace]:
    """Run the full search from the reference view; deterministic given
    deterministic backends.

    Returns the evidence set (globally capped, discovery-ordered) and the
    complete trace. Unexpected backend exceptions propagate as
    :class:`SearchFault` with the partial trace attached.
    """
    if intrinsics is None:
        intrinsics = Intrinsics.from_fov(reference.width, reference.height)
    state = initial_state(reference, intrinsics, pitch_degrees)
    try:
        for _ in range(cfg.n):
            if not state.beam:
                state.trace.add("terminal", state.step, cause="empty_beam")
                break
            state = beam_step(state, world, scorer, question, cfg)
            if state.terminal is not None:
                break
        else:
            state.trace.add("terminal", state.step, cause="step_limit")
    except Exception as exc:
        raise SearchFault(f"backend failure: {exc}", state.trace) from exc
    return _cap_evidence(state.evidence, cfg.evidence_cap), state.trace


def assemble_answer(question: Question, reference: Frame, evidence: EvidenceSet,
                    answerer, cfg: SearchConfig) -> AnswerRecord:
    """Single answer-stage call over the discovery-ordered evidence.

    Descriptions are stripped from the payload when the configuration
    disables them. An answerer fault yields an unanswered record, which
    the benchmark counts as incorrect.
    """
    payload = [
        AnswerEvidence(
            trajectory=item.trajectory,
            frame=item.frame,
            description=item.description if cfg.include_descriptions else None,
        )
        for item in evidence
    ]
    try:
        chosen, raw = answerer.answer(question, reference, payload)
    except ScoringError as exc:
        return AnswerRecord(question.question_id, None, f"fault: {exc}", False,
                            evidence, cfg.include_descriptions)
    return AnswerRecord(question.question_id, chosen, raw, True, evidence,
                        cfg.include_descriptions)

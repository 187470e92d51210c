"""Datasets, synthetic question suites, metrics and run reports.

Dataset files are UTF-8 line-delimited JSON records (extension
``.satq.jsonl``): ``{"id", "image", "question", "answers": [...],
"correct_answer_index"?, "category"?, "oracle"?}``. ``image`` may point
at a PNG or at a ``.scene.json`` file; scene-backed questions render
their reference view at the identity pose and can be scored/answered by
the geometric oracles via the record's ``oracle`` block.

The synthetic suite generator builds hidden-object scenes with a
verified geometric answer key: a colored target sits behind a large
near occluder, invisible from the reference pose but visible from the
terminal pose of a short forward trajectory, so search measurably beats
reference-only answering.

Questions within a run may be processed concurrently; the report is
always assembled in dataset order. Reports serialize canonically and
exclude wall-clock timing so identical runs emit identical bytes
(timing stays available on the in-memory report object).
"""

from __future__ import annotations

import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import correlate1d

from .geometry import (
    CameraPose,
    Intrinsics,
    Trajectory,
    cumulative_poses,
    move_forward,
    pitch_rotation,
)
from .scoring import (
    CANONICAL_CATEGORIES,
    OracleAnswerer,
    OracleScorer,
    OracleSpec,
    Question,
)
from .search import (
    AnswerRecord,
    EvidenceSet,
    SearchConfig,
    SearchTrace,
    assemble_answer,
    spatial_beam_search,
    trajectory_string,
    within_budget,
)
from .worldmodel import (
    Frame,
    Scene,
    SceneObject,
    SyntheticWorldModel,
    canonical_json,
    load_scene,
    render,
    save_scene,
    visibility,
)

DATASET_SUFFIX = ".satq.jsonl"
SCENE_SUFFIX = ".scene.json"

PSNR_CAP_DB = 100.0

# Color names offered as answer options, with their render RGB values.
COLOR_PALETTE = {
    "red": (200, 40, 40),
    "green": (50, 170, 60),
    "blue": (50, 80, 200),
    "yellow": (220, 200, 40),
    "purple": (140, 60, 180),
    "orange": (230, 130, 30),
    "cyan": (40, 190, 200),
    "magenta": (210, 60, 160),
}
OCCLUDER_COLORS = {"gray": (120, 120, 120), "brown": (140, 100, 60)}

HIDDEN_VISIBILITY_MAX = 0.01


class BenchError(Exception):
    """Base class for benchmark faults."""


class DatasetError(BenchError):
    """A dataset file is missing, malformed or violates an invariant."""


class SuiteGenerationError(BenchError):
    """The generator could not satisfy the case invariants."""


@dataclass(frozen=True)
class Dataset:
    questions: tuple[Question, ...]
    image_root: Path

    def __len__(self) -> int:
        return len(self.questions)

    def resolve_image(self, question: Question) -> Path:
        return self.image_root / question.image_ref


def load_dataset(path: str | Path) -> Dataset:
    """Parse and validate a ``.satq.jsonl`` file; images must exist."""
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"dataset file not found: {path}")
    root = path.parent
    questions: list[Question] = []
    seen_ids: set[str] = set()
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
            category = record.get("category", "other")
            if category not in CANONICAL_CATEGORIES:
                category = "other"
            meta = {}
            if "oracle" in record:
                meta["oracle"] = record["oracle"]
            question = Question(
                question_id=str(record["id"]),
                image_ref=str(record["image"]),
                text=str(record["question"]),
                choices=tuple(record["answers"]),
                answer_index=record.get("correct_answer_index"),
                category=category,
                meta=meta,
            )
        except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
            raise DatasetError(f"{path}:{lineno}: bad record: {exc}") from exc
        if question.question_id in seen_ids:
            raise DatasetError(f"{path}:{lineno}: duplicate id {question.question_id!r}")
        seen_ids.add(question.question_id)
        if not (root / question.image_ref).exists():
            raise DatasetError(
                f"{path}:{lineno}: referenced image not found: {question.image_ref}"
            )
        questions.append(question)
    return Dataset(tuple(questions), root)


@dataclass(frozen=True)
class SyntheticCase:
    """One generated scene + question pair with its geometric answer key."""

    scene: Scene
    scene_file: str
    question: Question
    oracle_spec: OracleSpec
    revealing_trajectory: Trajectory
    wrong_default_index: int
    distractor_ids: tuple[str, ...]


def _case_invariants_hold(case: SyntheticCase, intrinsics: Intrinsics,
                          cfg: SearchConfig) -> bool:
    hidden = visibility(case.scene, CameraPose.identity(), intrinsics,
                        case.oracle_spec.target_object_id)
    if hidden >= HIDDEN_VISIBILITY_MAX:
        return False
    terminal = cumulative_poses(case.revealing_trajectory)[-1]
    revealed = visibility(case.scene, terminal, intrinsics,
                          case.oracle_spec.target_object_id)
    if revealed < case.oracle_spec.visibility_threshold_help:
        return False
    return within_budget(case.revealing_trajectory, cfg)


def _sample_case(rng: np.random.Generator, index: int, intrinsics: Intrinsics,
                 cfg: SearchConfig) -> SyntheticCase | None:
    # Sizes are rounded first and ground-contact heights derived from the
    # rounded values, so the above-ground invariant survives quantization.
    occluder_name = ["gray", "brown"][int(rng.integers(0, 2))]
    occ_width = round(float(rng.uniform(0.8, 1.2)), 3)
    occ_height = round(float(rng.uniform(1.3, 1.45)), 3)
    occ_depth = round(float(rng.uniform(0.1, 0.2)), 3)
    occ_z = round(float(rng.uniform(0.55, 0.8)), 3)
    occ_x = round(float(rng.uniform(-0.08, 0.08)), 3)

    target_z = round(float(rng.uniform(2.2, 3.0)), 3)
    bearing = math.radians(float(rng.uniform(-10.0, 10.0)))
    target_x = round(target_z * math.tan(bearing), 3)
    target_radius = round(float(rng.uniform(0.25, 0.35)), 3)

    color_names = list(COLOR_PALETTE)
    order = [color_names[i] for i in rng.permutation(len(color_names))]
    target_color = order[0]
    n_distractors = int(rng.integers(1, 4))
    distractor_colors = order[1:1 + n_distractors]

    def on_ground_sphere(r: float) -> float:
        return 1.5 - r

    def on_ground_box(height: float) -> float:
        return 1.5 - height / 2.0

    objects = [
        SceneObject("occluder", "box",
                    center=(occ_x, on_ground_box(occ_height), occ_z),
                    size=(occ_width, occ_height, occ_depth),
                    color=OCCLUDER_COLORS[occluder_name]),
        SceneObject("target", "sphere",
                    center=(target_x, on_ground_sphere(target_radius), target_z),
                    radius=target_radius,
                    color=COLOR_PALETTE[target_color]),
    ]
    distractor_ids = []
    for i, name in enumerate(distractor_colors):
        side = 1.0 if rng.random() < 0.5 else -1.0
        dx = round(side * float(rng.uniform(1.3, 2.2)), 3)
        dz = round(float(rng.uniform(1.5, 3.5)), 3)
        obj_id = f"distractor-{i + 1}"
        if rng.random() < 0.5:
            radius = round(float(rng.uniform(0.2, 0.4)), 3)
            objects.append(SceneObject(obj_id, "sphere",
                                       center=(dx, on_ground_sphere(radius), dz),
                                       radius=radius,
                                       color=COLOR_PALETTE[name]))
        else:
            extent = round(float(rng.uniform(0.3, 0.5)), 3)
            objects.append(SceneObject(obj_id, "box",
                                       center=(dx, on_ground_box(extent), dz),
                                       size=(extent, extent, extent),
                                       color=COLOR_PALETTE[name]))
        distractor_ids.append(obj_id)
    scene = Scene(tuple(objects))

    # Shortest all-forward trajectory whose terminal pose is past the
    # occluder's back face with a little clearance.
    back_face = occ_z + occ_depth / 2.0
    reps = max(1, math.ceil((back_face + 0.05) / cfg.forward_step))
    revealing = Trajectory().extend(move_forward(cfg.forward_step), reps)

    spec = OracleSpec(target_object_id="target")

    option_names = [target_color] + distractor_colors
    for name in order[1 + n_distractors:]:
        if len(option_names) >= 4:
            break
        option_names.append(name)
    shuffled = [option_names[i] for i in rng.permutation(4)]
    answer_index = shuffled.index(target_color)
    wrong_default = (answer_index + 1) % 4

    scene_file = f"case-{index:04d}{SCENE_SUFFIX}"
    question = Question(
        question_id=f"case-{index:04d}",
        image_ref=scene_file,
        text=f"Which colored object is hidden behind the large {occluder_name} box?",
        choices=tuple(shuffled),
        answer_index=answer_index,
        category=CANONICAL_CATEGORIES[index % len(CANONICAL_CATEGORIES)],
        meta={"oracle": {
            "target": "target",
            "visibility_threshold": spec.visibility_threshold_help,
            "wrong_default_index": wrong_default,
            "revealing_trajectory": trajectory_string(revealing),
        }},
    )
    case = SyntheticCase(scene, scene_file, question, spec, revealing,
                         wrong_default, tuple(distractor_ids))
    return case if _case_invariants_hold(case, intrinsics, cfg) else None


def generate_suite(seed: int, count: int, intrinsics: Intrinsics | None = None,
                   cfg: SearchConfig | None = None,
                   max_retries_per_case: int = 50) -> list[SyntheticCase]:
    """Deterministically generate ``count`` verified hidden-object cases."""
    if count < 1:
        raise SuiteGenerationError(f"count must be >= 1, got {count}")
    if intrinsics is None:
        intrinsics = Intrinsics.from_fov(256, 256)
    if cfg is None:
        cfg = SearchConfig()
    rng = np.random.default_rng(seed)
    cases: list[SyntheticCase] = []
    for index in range(count):
        for _ in range(max_retries_per_case):
            case = _sample_case(rng, index, intrinsics, cfg)
            if case is not None:
                cases.append(case)
                break
        else:
            raise SuiteGenerationError(
                f"case {index}: no valid geometry after {max_retries_per_case} tries"
            )
    return cases


def write_suite(cases: list[SyntheticCase], out_dir: str | Path,
                dataset_name: str = "suite") -> Path:
    """Write scene files plus the question file; returns the dataset path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = []
    for case in cases:
        save_scene(case.scene, out_dir / case.scene_file)
        q = case.question
        record = {
            "id": q.question_id,
            "image": q.image_ref,
            "question": q.text,
            "answers": list(q.choices),
            "correct_answer_index": q.answer_index,
            "category": q.category,
            "oracle": q.meta["oracle"],
        }
        lines.append(canonical_json(record).decode("utf-8"))
    dataset_path = out_dir / f"{dataset_name}{DATASET_SUFFIX}"
    dataset_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return dataset_path


def reference_frame_for(question: Question, image_root: Path, intrinsics: Intrinsics,
                        pitch_degrees: float = 0.0) -> Frame:
    """Decode the reference view: scene files render at the start pose
    (identity, tilted by any configured pitch)."""
    path = Path(image_root) / question.image_ref
    if path.name.endswith(SCENE_SUFFIX):
        pose = (pitch_rotation(pitch_degrees) if pitch_degrees != 0.0
                else CameraPose.identity())
        return render(load_scene(path), pose, intrinsics)
    return Frame.from_png_bytes(path.read_bytes())


def oracle_backends(dataset: Dataset, intrinsics: Intrinsics, pitch_degrees: float = 0.0):
    """Per-question factories for the synthetic world plus geometric oracles.

    Requires every question to carry an ``oracle`` block and reference a
    scene file.
    """
    scene_cache: dict[str, Scene] = {}

    def scene_for(question: Question) -> Scene:
        key = question.image_ref
        if key not in scene_cache:
            scene_cache[key] = load_scene(dataset.resolve_image(question))
        return scene_cache[key]

    def spec_for(question: Question) -> OracleSpec:
        block = question.meta.get("oracle")
        if not block:
            raise BenchError(f"question {question.question_id}: no oracle block")
        return OracleSpec(
            target_object_id=block["target"],
            visibility_threshold_help=block.get("visibility_threshold", 0.02),
        )

    def world_for(question: Question) -> SyntheticWorldModel:
        return SyntheticWorldModel(scene_for(question))

    def scorer_for(question: Question) -> OracleScorer:
        return OracleScorer(spec_for(question), scene_for(question), intrinsics,
                            pitch_degrees)

    def answerer_for(question: Question) -> OracleAnswerer:
        block = question.meta["oracle"]
        if question.answer_index is None:
            raise BenchError(f"question {question.question_id}: oracle needs an answer key")
        return OracleAnswerer(spec_for(question), scene_for(question), intrinsics,
                              correct_index=question.answer_index,
                              wrong_default_index=block.get("wrong_default_index", 0),
                              pitch_degrees=pitch_degrees)

    return world_for, scorer_for, answerer_for


@dataclass(frozen=True)
class QuestionResult:
    question: Question
    record: AnswerRecord
    correct: bool
    trace: SearchTrace | None

    @property
    def rollouts(self) -> int:
        return self.trace.rollout_count() if self.trace is not None else 0


@dataclass
class RunReport:
    """Aggregate outcome of one benchmark run.

    ``wall_clock_seconds`` is intentionally excluded from the canonical
    serialization so identical runs emit identical bytes.
    """

    label: str
    results: list[QuestionResult]
    config: SearchConfig
    world_name: str
    scorer_name: str
    answerer_name: str
    wall_clock_seconds: float = 0.0

    @property
    def question_count(self) -> int:
        return len(self.results)

    @property
    def rollout_requests(self) -> int:
        return sum(r.rollouts for r in self.results)

    def category_order(self) -> list[str]:
        present = {r.question.category for r in self.results}
        ordered = [c for c in CANONICAL_CATEGORIES if c in present]
        ordered.extend(sorted(present - set(CANONICAL_CATEGORIES)))
        return ordered

    def per_category(self) -> dict[str, dict]:
        stats: dict[str, dict] = {}
        for cat in self.category_order():
            rows = [r for r in self.results if r.question.category == cat]
            correct = sum(1 for r in rows if r.correct)
            stats[cat] = {
                "total": len(rows),
                "correct": correct,
                "accuracy": correct / len(rows) if rows else None,
            }
        return stats

    @property
    def average_accuracy(self) -> float | None:
        if not self.results:
            return None
        return sum(1 for r in self.results if r.correct) / len(self.results)

    def to_json_dict(self) -> dict:
        from dataclasses import asdict

        return {
            "label": self.label,
            "question_count": self.question_count,
            "average_accuracy": self.average_accuracy,
            "per_category": self.per_category(),
            "rollout_requests": self.rollout_requests,
            "world_model": self.world_name,
            "scorer": self.scorer_name,
            "answerer": self.answerer_name,
            "config": asdict(self.config),
            "questions": [
                {
                    "id": r.question.question_id,
                    "category": r.question.category,
                    "chosen_index": r.record.chosen_index,
                    "correct_answer_index": r.question.answer_index,
                    "answered": r.record.answered,
                    "correct": r.correct,
                    "evidence": [trajectory_string(item.trajectory)
                                 for item in r.record.evidence],
                    "rollouts": r.rollouts,
                }
                for r in self.results
            ],
        }


def run_benchmark(dataset: Dataset, world, scorer, answerer, cfg: SearchConfig,
                  baseline: bool = False, intrinsics: Intrinsics | None = None,
                  parallelism: int = 1, pitch_degrees: float = 0.0) -> RunReport:
    """Answer every question; ``world``/``scorer``/``answerer`` are
    per-question factories ``Question -> handle``.

    ``baseline=True`` skips search entirely and answers from the
    reference view alone (zero world-model calls). Per-question faults
    are recorded as unanswered; the run continues.
    """
    if intrinsics is None:
        intrinsics = Intrinsics.from_fov(256, 256)
    started = time.perf_counter()

    def solve(question: Question) -> QuestionResult:
        reference = reference_frame_for(question, dataset.image_root, intrinsics,
                                        pitch_degrees)
        trace = None
        if baseline:
            evidence = EvidenceSet()
        else:
            evidence, trace = spatial_beam_search(
                reference, question, world(question), scorer(question), cfg,
                intrinsics=intrinsics, pitch_degrees=pitch_degrees,
            )
        record = assemble_answer(question, reference, evidence, answerer(question), cfg)
        correct = (
            record.answered
            and question.answer_index is not None
            and record.chosen_index == question.answer_index
        )
        return QuestionResult(question, record, correct, trace)

    if parallelism > 1 and len(dataset.questions) > 1:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            results = list(pool.map(solve, dataset.questions))
    else:
        results = [solve(q) for q in dataset.questions]

    sample = dataset.questions[0] if dataset.questions else None
    report = RunReport(
        label="baseline" if baseline else "search",
        results=results,
        config=cfg,
        world_name="(unused)" if baseline or sample is None else world(sample).name,
        scorer_name="(unused)" if baseline or sample is None else scorer(sample).name,
        answerer_name="(none)" if sample is None else answerer(sample).name,
        wall_clock_seconds=time.perf_counter() - started,
    )
    return report


# --- image quality metrics -------------------------------------------------

def _check_same_size(a: Frame, b: Frame) -> None:
    if (a.height, a.width) != (b.height, b.width):
        raise ValueError(
            f"frame sizes differ: {a.width}x{a.height} vs {b.width}x{b.height}"
        )


def psnr(a: Frame, b: Frame) -> float:
    """Peak signal-to-noise ratio in dB over all RGB samples.

    Zero MSE (identical frames) returns the 100 dB cap; any difference
    returns the raw value, so hitting the cap identifies identity.
    """
    _check_same_size(a, b)
    diff = a.pixels.astype(np.float64) - b.pixels.astype(np.float64)
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return PSNR_CAP_DB
    return 10.0 * math.log10(255.0**2 / mse)


def _luma(frame: Frame) -> np.ndarray:
    p = frame.pixels.astype(np.float64)
    return 0.299 * p[..., 0] + 0.587 * p[..., 1] + 0.114 * p[..., 2]


def _gaussian_kernel(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    offsets = np.arange(size) - (size - 1) / 2.0
    kernel = np.exp(-(offsets**2) / (2.0 * sigma**2))
    return kernel / kernel.sum()


def _window_mean(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    # Separable valid-region filtering: full correlate then crop margins.
    half = len(kernel) // 2
    out = correlate1d(img, kernel, axis=0, mode="constant")
    out = correlate1d(out, kernel, axis=1, mode="constant")
    return out[half:-half, half:-half]


def ssim(a: Frame, b: Frame) -> float:
    """Single-scale structural similarity on luma.

    11x11 Gaussian window with sigma 1.5, K1=0.01, K2=0.03, L=255,
    averaged over all valid window positions.
    """
    _check_same_size(a, b)
    if min(a.height, a.width) < 11:
        raise ValueError("frames must be at least 11 pixels on each side")
    x, y = _luma(a), _luma(b)
    c1 = (0.01 * 255.0) ** 2
    c2 = (0.03 * 255.0) ** 2
    kernel = _gaussian_kernel()

    mu_x = _window_mean(x, kernel)
    mu_y = _window_mean(y, kernel)
    var_x = _window_mean(x * x, kernel) - mu_x * mu_x
    var_y = _window_mean(y * y, kernel) - mu_y * mu_y
    cov = _window_mean(x * y, kernel) - mu_x * mu_y

    numer = (2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2)
    denom = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
    return float(np.mean(numer / denom))


# --- report emission -------------------------------------------------------

def emit_report(report: RunReport | dict, fmt: str = "text-table") -> str:
    """Render a run report.

    "structured" is canonical JSON that round-trips byte-stably;
    "text-table" mirrors the Avg + per-category accuracy layout.
    """
    doc = report.to_json_dict() if isinstance(report, RunReport) else report
    if fmt == "structured":
        return canonical_json(doc).decode("utf-8") + "\n"
    if fmt != "text-table":
        raise ValueError(f"unknown report format {fmt!r}")

    categories = list(doc["per_category"])
    headers = ["Avg"] + categories

    def pct(value) -> str:
        return "n/a" if value is None else f"{100.0 * value:.1f}"

    acc_row = [pct(doc["average_accuracy"])] + [
        pct(doc["per_category"][c]["accuracy"]) for c in categories
    ]
    n_row = [str(doc["question_count"])] + [
        str(doc["per_category"][c]["total"]) for c in categories
    ]
    width = max(8, *(len(h) + 2 for h in headers))
    lines = [
        f"run: {doc['label']}   questions: {doc['question_count']}   "
        f"world: {doc['world_model']}",
        "".join(h.rjust(width) for h in [""] + headers),
        "".join(v.rjust(width) for v in ["acc"] + acc_row),
        "".join(v.rjust(width) for v in ["n"] + n_row),
    ]
    return "\n".join(lines) + "\n"


def parse_report(text: str) -> dict:
    """Inverse of the structured emission."""
    return json.loads(text)

"""Operator command line: run benchmarks, inspect expansions, render walks.

Configuration precedence is command-line flag > environment variable >
config file (JSON) > built-in default. The recognized environment
variables are SPATIAL_BEAM_API_KEY (bearer token for remote chat
backends, read by the scoring client) and SPATIAL_BEAM_WM_ENDPOINT
(world-model service endpoint).

Exit codes: 0 success, 2 configuration fault, 3 dataset fault,
4 backend fault.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import bench
from .bench import BenchError, Dataset, DatasetError, load_dataset
from .geometry import CameraPose, Intrinsics, cumulative_poses
from .scoring import RemoteAnswerer, RemoteChatClient, RemoteScorer, ScoringError
from .search import (
    BeamNode,
    SearchConfig,
    enumerate_expansion,
    parse_trajectory,
    trajectory_string,
    within_budget,
)
from .worldmodel import (
    Frame,
    RemoteWorldModel,
    WorldModelError,
    canonical_json,
    load_scene,
    render,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATASET = 3
EXIT_BACKEND = 4

WM_ENDPOINT_ENV = "SPATIAL_BEAM_WM_ENDPOINT"


class ConfigError(Exception):
    """Invalid configuration; the message names the offending key."""


@dataclass
class AppConfig:
    """Resolved run configuration: search knobs plus backend selection."""

    search: SearchConfig
    world: str = "synthetic"
    scorer: str = "oracle"
    answerer: str = "oracle"
    world_endpoint: str | None = None
    chat_base_url: str | None = None
    chat_model: str = "gpt-4o"
    template_dir: str | None = None
    parallelism: int = 1
    seed: int = 0
    frame_size: int = 256
    fov_degrees: float = 60.0
    pitch_degrees: float = 0.0

    def intrinsics(self) -> Intrinsics:
        return Intrinsics.from_fov(self.frame_size, self.frame_size, self.fov_degrees)

    def validate(self) -> None:
        if self.world not in ("synthetic", "remote"):
            raise ConfigError(f"world.kind: must be synthetic or remote, got {self.world!r}")
        if self.scorer not in ("oracle", "remote"):
            raise ConfigError(f"scorer.kind: must be oracle or remote, got {self.scorer!r}")
        if self.answerer not in ("oracle", "remote"):
            raise ConfigError(f"answerer.kind: must be oracle or remote, got {self.answerer!r}")
        if self.world == "remote" and not self.world_endpoint:
            raise ConfigError("world.endpoint: required when world is remote")
        if self.scorer == "remote" and not self.chat_base_url:
            raise ConfigError("scorer.base_url: required when scorer is remote")
        if self.answerer == "remote" and not self.chat_base_url:
            raise ConfigError("answerer.base_url: required when answerer is remote")
        if self.parallelism < 1:
            raise ConfigError("run.parallelism: must be >= 1")
        if self.frame_size < 16:
            raise ConfigError("frame.size: must be >= 16")

    def to_json_dict(self) -> dict:
        from dataclasses import asdict

        doc = asdict(self)
        doc["search"] = asdict(self.search)
        return doc


_SEARCH_FLAGS = {
    "n": "n",
    "k": "k",
    "beam": "beam_width",
    "helpful": "helpful_per_step",
    "gamma_exp": "gamma_exp",
    "gamma_help": "gamma_help",
    "max_traj_len": "max_traj_len",
    "forward_step": "forward_step",
    "turn_step": "turn_step",
    "rotation_budget": "rotation_budget",
    "translation_budget": "translation_budget",
    "evidence_cap": "evidence_cap",
}

_APP_FLAGS = {
    "world": "world",
    "scorer": "scorer",
    "answerer": "answerer",
    "wm_endpoint": "world_endpoint",
    "chat_base_url": "chat_base_url",
    "chat_model": "chat_model",
    "template_dir": "template_dir",
    "parallelism": "parallelism",
    "seed": "seed",
    "frame_size": "frame_size",
    "fov": "fov_degrees",
    "pitch": "pitch_degrees",
}


def _load_config_file(path: str | Path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config.file: not found: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config.file: invalid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config.file: top level must be an object")
    return doc


def resolve_config(args: argparse.Namespace, env: dict | None = None) -> AppConfig:
    """Merge defaults, config file, environment and flags, in that order."""
    env = os.environ if env is None else env
    file_doc = _load_config_file(args.config) if getattr(args, "config", None) else {}

    search_kwargs: dict = {}
    app_kwargs: dict = {}

    file_search = file_doc.get("search", {})
    valid_search = {f.name for f in fields(SearchConfig)}
    for key, value in file_search.items():
        if key not in valid_search:
            raise ConfigError(f"search.{key}: unknown key")
        search_kwargs[key] = value
    if "include_descriptions" in file_search:
        search_kwargs["include_descriptions"] = bool(file_search["include_descriptions"])

    file_app_map = {
        ("world", "kind"): "world",
        ("world", "endpoint"): "world_endpoint",
        ("scorer", "kind"): "scorer",
        ("answerer", "kind"): "answerer",
        ("chat", "base_url"): "chat_base_url",
        ("chat", "model"): "chat_model",
        ("templates", "dir"): "template_dir",
        ("run", "parallelism"): "parallelism",
        ("run", "seed"): "seed",
        ("frame", "size"): "frame_size",
        ("frame", "fov_degrees"): "fov_degrees",
        ("frame", "pitch_degrees"): "pitch_degrees",
    }
    for (section, key), attr in file_app_map.items():
        if section in file_doc and key in file_doc[section]:
            app_kwargs[attr] = file_doc[section][key]

    if env.get(WM_ENDPOINT_ENV):
        app_kwargs["world_endpoint"] = env[WM_ENDPOINT_ENV]

    for flag, field_name in _SEARCH_FLAGS.items():
        value = getattr(args, flag, None)
        if value is not None:
            search_kwargs[field_name] = value
    if getattr(args, "no_descriptions", False):
        search_kwargs["include_descriptions"] = False
    for flag, attr in _APP_FLAGS.items():
        value = getattr(args, flag, None)
        if value is not None:
            app_kwargs[attr] = value

    try:
        config = AppConfig(search=SearchConfig(**search_kwargs), **app_kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"search: {exc}") from exc
    config.validate()
    return config


def _backends(config: AppConfig, dataset: Dataset):
    intrinsics = config.intrinsics()
    oracle_world, oracle_scorer, oracle_answerer = bench.oracle_backends(
        dataset, intrinsics, config.pitch_degrees
    )
    if config.world == "synthetic":
        world = oracle_world
    else:
        remote_world = RemoteWorldModel(config.world_endpoint)
        # Probe once up front so a dead endpoint is a hard fault instead
        # of a silent evidence-free run.
        remote_world.health()
        world = lambda q: remote_world
    if config.scorer == "oracle":
        scorer = oracle_scorer
    else:
        client = RemoteChatClient(config.chat_base_url, config.chat_model)
        remote_scorer = RemoteScorer(client, template_dir=config.template_dir)
        scorer = lambda q: remote_scorer
    if config.answerer == "oracle":
        answerer = oracle_answerer
    else:
        client = RemoteChatClient(config.chat_base_url, config.chat_model)
        remote_answerer = RemoteAnswerer(client, template_dir=config.template_dir)
        answerer = lambda q: remote_answerer
    return world, scorer, answerer


def cmd_run(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    dataset = load_dataset(args.dataset)
    if config.world == "synthetic":
        for q in dataset.questions:
            if not q.image_ref.endswith(bench.SCENE_SUFFIX):
                raise ConfigError(
                    f"world.scene_source: synthetic world needs scene-backed questions, "
                    f"but {q.question_id} references {q.image_ref}"
                )
    world, scorer, answerer = _backends(config, dataset)
    report = bench.run_benchmark(
        dataset, world, scorer, answerer, config.search,
        baseline=args.baseline, intrinsics=config.intrinsics(),
        parallelism=config.parallelism, pitch_degrees=config.pitch_degrees,
    )

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.report.json").write_text(
        bench.emit_report(report, "structured"), encoding="utf-8")
    (out_dir / "report.report.txt").write_text(
        bench.emit_report(report, "text-table"), encoding="utf-8")
    questions_dir = out_dir / "questions"
    questions_dir.mkdir(exist_ok=True)
    for result in report.results:
        doc = {
            "question": {
                "id": result.question.question_id,
                "text": result.question.text,
                "choices": list(result.question.choices),
                "category": result.question.category,
            },
            "answer": result.record.to_json_dict(),
            "correct": result.correct,
        }
        (questions_dir / f"{result.question.question_id}.answer.json").write_text(
            canonical_json(doc).decode("utf-8") + "\n", encoding="utf-8")
        if result.trace is not None:
            (questions_dir / f"{result.question.question_id}.trace.jsonl").write_text(
                result.trace.to_jsonl(), encoding="utf-8")

    print(bench.emit_report(report, "text-table"))
    print(f"wall clock: {report.wall_clock_seconds:.1f}s "
          f"(excluded from report files)", file=sys.stderr)
    return EXIT_OK


def cmd_expand(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    try:
        trajectory = parse_trajectory(args.trajectory)
    except ValueError as exc:
        raise ConfigError(f"expand.trajectory: {exc}") from exc
    node = BeamNode(trajectory, None, 0)
    rows = enumerate_expansion(node, config.search)
    print(f"expanding {trajectory_string(trajectory) or '(root)'} "
          f"with k={config.search.k}: {len(rows)} candidates")
    for candidate, disposition in rows:
        print(f"  {trajectory_string(candidate.full_trajectory):<40} {disposition}")
    return EXIT_OK


def cmd_render(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    scene_path = Path(args.scene)
    if not scene_path.exists():
        raise DatasetError(f"scene file not found: {scene_path}")
    try:
        scene = load_scene(scene_path)
    except ValueError as exc:
        raise DatasetError(str(exc)) from exc
    try:
        trajectory = parse_trajectory(args.trajectory)
    except ValueError as exc:
        raise ConfigError(f"render.trajectory: {exc}") from exc
    if not within_budget(trajectory, config.search):
        raise ConfigError("render.trajectory: exceeds the configured budgets")

    intrinsics = config.intrinsics()
    poses = [CameraPose.identity()] + cumulative_poses(trajectory)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    frames = []
    for i, pose in enumerate(poses):
        frame = render(scene, pose, intrinsics)
        frames.append(frame)
        (out_dir / f"step-{i:03d}.png").write_bytes(frame.to_png_bytes())
    strip = Frame(np.concatenate([f.pixels for f in frames], axis=1))
    (out_dir / "strip.png").write_bytes(strip.to_png_bytes())
    print(f"wrote {len(frames)} frames and strip.png to {out_dir}")
    return EXIT_OK


def cmd_gen_suite(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    if args.count < 1:
        raise ConfigError("gen-suite.count: must be >= 1")
    cases = bench.generate_suite(args.suite_seed, args.count,
                                 intrinsics=config.intrinsics(), cfg=config.search)
    dataset_path = bench.write_suite(cases, args.out)
    print(f"wrote {len(cases)} cases to {dataset_path}")
    return EXIT_OK


def cmd_config(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    print(canonical_json(config.to_json_dict()).decode("utf-8"))
    return EXIT_OK


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file")
    search = parser.add_argument_group("search")
    search.add_argument("--n", type=int, help="max search steps")
    search.add_argument("--k", type=int, help="max consecutive repetitions per action")
    search.add_argument("--beam", type=int, help="beam width")
    search.add_argument("--helpful", type=int, help="helpful views cached per step")
    search.add_argument("--gamma-exp", dest="gamma_exp", type=float,
                        help="exploration score threshold")
    search.add_argument("--gamma-help", dest="gamma_help", type=float,
                        help="helpfulness score threshold")
    search.add_argument("--max-traj-len", dest="max_traj_len", type=int)
    search.add_argument("--forward-step", dest="forward_step", type=float,
                        help="meters per forward action")
    search.add_argument("--turn-step", dest="turn_step", type=float,
                        help="degrees per turn action")
    search.add_argument("--rotation-budget", dest="rotation_budget", type=float)
    search.add_argument("--translation-budget", dest="translation_budget", type=float)
    search.add_argument("--evidence-cap", dest="evidence_cap", type=int)
    search.add_argument("--no-descriptions", dest="no_descriptions", action="store_true",
                        help="drop trajectory descriptions from answer payloads")
    backends = parser.add_argument_group("backends")
    backends.add_argument("--world", choices=("synthetic", "remote"))
    backends.add_argument("--scorer", choices=("oracle", "remote"))
    backends.add_argument("--answerer", choices=("oracle", "remote"))
    backends.add_argument("--wm-endpoint", dest="wm_endpoint",
                          help="rollout service endpoint")
    backends.add_argument("--chat-base-url", dest="chat_base_url")
    backends.add_argument("--chat-model", dest="chat_model")
    backends.add_argument("--template-dir", dest="template_dir")
    run = parser.add_argument_group("run")
    run.add_argument("--parallelism", type=int)
    run.add_argument("--run-seed", dest="seed", type=int)
    run.add_argument("--frame-size", dest="frame_size", type=int)
    run.add_argument("--fov", type=float)
    run.add_argument("--pitch", type=float, help="camera pitch in degrees")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spatialbeam",
        description="Beam search over egocentric trajectories for spatial question answering",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a benchmark over a dataset")
    p_run.add_argument("--dataset", required=True, help="path to a .satq.jsonl file")
    p_run.add_argument("--out", required=True, help="output directory for report artifacts")
    p_run.add_argument("--baseline", action="store_true",
                       help="answer from the reference view only, no search")
    _add_config_flags(p_run)
    p_run.set_defaults(handler=cmd_run)

    p_expand = sub.add_parser("expand", help="show one trajectory expansion")
    p_expand.add_argument("--trajectory", default="",
                          help='trajectory string like "F0.25|L9" (empty for root)')
    _add_config_flags(p_expand)
    p_expand.set_defaults(handler=cmd_expand)

    p_render = sub.add_parser("render", help="render a trajectory walkthrough")
    p_render.add_argument("--scene", required=True, help="path to a .scene.json file")
    p_render.add_argument("--trajectory", default="")
    p_render.add_argument("--out", required=True)
    _add_config_flags(p_render)
    p_render.set_defaults(handler=cmd_render)

    p_gen = sub.add_parser("gen-suite", help="generate a synthetic question suite")
    p_gen.add_argument("--seed", dest="suite_seed", type=int, default=7)
    p_gen.add_argument("--count", type=int, default=50)
    p_gen.add_argument("--out", required=True)
    _add_config_flags(p_gen)
    p_gen.set_defaults(handler=cmd_gen_suite)

    p_config = sub.add_parser("config", help="print the resolved configuration")
    _add_config_flags(p_config)
    p_config.set_defaults(handler=cmd_config)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except ConfigError as exc:
        print(f"config fault: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BenchError as exc:
        print(f"dataset fault: {exc}", file=sys.stderr)
        return EXIT_DATASET
    except (WorldModelError, ScoringError) as exc:
        print(f"backend fault: {exc}", file=sys.stderr)
        return EXIT_BACKEND


if __name__ == "__main__":
    sys.exit(main())

"""CLI tests: subcommands, exit codes and configuration precedence,
exercised through main(argv) with a scrubbed environment."""

from __future__ import annotations

import json
from pathlib import Path

import pytest

from spatialbeam.bench import generate_suite, write_suite
from spatialbeam.cli import (
    EXIT_BACKEND,
    EXIT_CONFIG,
    EXIT_DATASET,
    EXIT_OK,
    main,
)
from spatialbeam.geometry import Intrinsics

K96 = Intrinsics.from_fov(96, 96)


@pytest.fixture(autouse=True)
def scrub_env(monkeypatch):
    monkeypatch.delenv("SPATIAL_BEAM_WM_ENDPOINT", raising=False)
    monkeypatch.delenv("SPATIAL_BEAM_API_KEY", raising=False)


@pytest.fixture
def suite_dir(tmp_path):
    cases = generate_suite(seed=21, count=2, intrinsics=K96)
    write_suite(cases, tmp_path / "suite")
    return tmp_path / "suite"


def run_cli(*argv) -> int:
    return main(list(argv))


class TestRun:
    def test_oracle_run_writes_artifacts(self, suite_dir, tmp_path, capsys):
        out = tmp_path / "out"
        code = run_cli("run", "--dataset", str(suite_dir / "suite.satq.jsonl"),
                       "--out", str(out), "--frame-size", "96")
        assert code == EXIT_OK
        report = json.loads((out / "report.report.json").read_text())
        assert report["label"] == "search"
        assert report["average_accuracy"] == 1.0
        assert (out / "report.report.txt").exists()
        traces = list((out / "questions").glob("*.trace.jsonl"))
        answers = list((out / "questions").glob("*.answer.json"))
        assert len(traces) == 2 and len(answers) == 2

    def test_baseline_makes_zero_rollouts(self, suite_dir, tmp_path):
        out = tmp_path / "out"
        code = run_cli("run", "--dataset", str(suite_dir / "suite.satq.jsonl"),
                       "--out", str(out), "--baseline", "--frame-size", "96")
        assert code == EXIT_OK
        report = json.loads((out / "report.report.json").read_text())
        assert report["label"] == "baseline"
        assert report["rollout_requests"] == 0
        assert all(q["rollouts"] == 0 for q in report["questions"])

    def test_remote_world_without_endpoint_is_config_fault(self, suite_dir, tmp_path,
                                                           capsys):
        code = run_cli("run", "--dataset", str(suite_dir / "suite.satq.jsonl"),
                       "--out", str(tmp_path / "out"), "--world", "remote")
        assert code == EXIT_CONFIG
        assert "world.endpoint" in capsys.readouterr().err

    def test_missing_dataset_is_dataset_fault(self, tmp_path):
        code = run_cli("run", "--dataset", str(tmp_path / "absent.satq.jsonl"),
                       "--out", str(tmp_path / "out"))
        assert code == EXIT_DATASET

    def test_unreachable_remote_world_is_backend_fault(self, suite_dir, tmp_path):
        code = run_cli("run", "--dataset", str(suite_dir / "suite.satq.jsonl"),
                       "--out", str(tmp_path / "out"), "--world", "remote",
                       "--wm-endpoint", "http://127.0.0.1:1", "--frame-size", "96")
        assert code == EXIT_BACKEND


class TestExpand:
    def test_root_prints_nine_rows(self, capsys):
        assert run_cli("expand", "--trajectory", "") == EXIT_OK
        out = capsys.readouterr().out
        assert "9 candidates" in out
        assert out.count("kept") == 9

    def test_left_turn_marks_right_reversals(self, capsys):
        assert run_cli("expand", "--trajectory", "L9") == EXIT_OK
        out = capsys.readouterr().out
        assert out.count("pruned:reversal") == 3
        for line in out.splitlines():
            if "pruned:reversal" in line:
                assert "|R9" in line

    def test_length_eight_all_budget_pruned(self, capsys):
        traj = "|".join(["F0.25"] * 8)
        assert run_cli("expand", "--trajectory", traj) == EXIT_OK
        assert capsys.readouterr().out.count("pruned:budget") == 9

    def test_garbage_trajectory_is_config_fault(self, capsys):
        assert run_cli("expand", "--trajectory", "Z9") == EXIT_CONFIG


class TestRender:
    def test_empty_trajectory_renders_reference_only(self, suite_dir, tmp_path):
        scene = next(suite_dir.glob("*.scene.json"))
        out = tmp_path / "frames"
        code = run_cli("render", "--scene", str(scene), "--trajectory", "",
                       "--out", str(out), "--frame-size", "64")
        assert code == EXIT_OK
        assert sorted(p.name for p in out.glob("*.png")) == ["step-000.png", "strip.png"]

    def test_inverse_pair_last_frame_matches_reference(self, suite_dir, tmp_path):
        scene = next(suite_dir.glob("*.scene.json"))
        out = tmp_path / "frames"
        code = run_cli("render", "--scene", str(scene), "--trajectory", "L9|L9|R9|R9",
                       "--out", str(out), "--frame-size", "64")
        assert code == EXIT_OK
        frames = sorted(out.glob("step-*.png"))
        assert len(frames) == 5  # reference + 4 steps
        assert frames[0].read_bytes() == frames[-1].read_bytes()

    def test_budget_violation_is_config_fault(self, suite_dir, tmp_path):
        scene = next(suite_dir.glob("*.scene.json"))
        traj = "|".join(["F0.25"] * 9)
        code = run_cli("render", "--scene", str(scene), "--trajectory", traj,
                       "--out", str(tmp_path / "frames"))
        assert code == EXIT_CONFIG

    def test_missing_scene_is_dataset_fault(self, tmp_path):
        code = run_cli("render", "--scene", str(tmp_path / "nope.scene.json"),
                       "--trajectory", "", "--out", str(tmp_path / "frames"))
        assert code == EXIT_DATASET


class TestGenSuite:
    def test_writes_scene_question_pairs(self, tmp_path, capsys):
        out = tmp_path / "suite"
        code = run_cli("gen-suite", "--seed", "7", "--count", "3", "--out", str(out),
                       "--frame-size", "96")
        assert code == EXIT_OK
        assert len(list(out.glob("*.scene.json"))) == 3
        assert (out / "suite.satq.jsonl").exists()

    def test_repeat_is_byte_identical(self, tmp_path):
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        for out in (out_a, out_b):
            assert run_cli("gen-suite", "--seed", "9", "--count", "2", "--out",
                           str(out), "--frame-size", "96") == EXIT_OK
        assert (out_a / "suite.satq.jsonl").read_bytes() == (
            out_b / "suite.satq.jsonl").read_bytes()

    def test_count_zero_is_usage_fault(self, tmp_path):
        code = run_cli("gen-suite", "--seed", "1", "--count", "0",
                       "--out", str(tmp_path / "s"))
        assert code == EXIT_CONFIG


class TestConfigPrecedence:
    def resolved(self, capsys, *argv) -> dict:
        assert run_cli("config", *argv) == EXIT_OK
        return json.loads(capsys.readouterr().out)

    def test_builtin_defaults_match_paper_configuration(self, capsys):
        doc = self.resolved(capsys)
        search = doc["search"]
        assert search["n"] == 3 and search["k"] == 3 and search["beam_width"] == 2
        assert search["gamma_exp"] == 8.0 and search["gamma_help"] == 8.0
        assert search["forward_step"] == 0.25 and search["turn_step"] == 9.0
        assert search["max_traj_len"] == 8

    def test_flag_beats_env_beats_file(self, capsys, tmp_path, monkeypatch):
        config = tmp_path / "c.json"
        config.write_text(json.dumps(
            {"world": {"kind": "remote", "endpoint": "http://file.test"}}))

        doc = self.resolved(capsys, "--config", str(config))
        assert doc["world_endpoint"] == "http://file.test"

        monkeypatch.setenv("SPATIAL_BEAM_WM_ENDPOINT", "http://env.test")
        doc = self.resolved(capsys, "--config", str(config))
        assert doc["world_endpoint"] == "http://env.test"

        doc = self.resolved(capsys, "--config", str(config),
                            "--wm-endpoint", "http://flag.test")
        assert doc["world_endpoint"] == "http://flag.test"

    def test_flag_beats_file_for_search_values(self, capsys, tmp_path):
        config = tmp_path / "c.json"
        config.write_text(json.dumps({"search": {"gamma_exp": 5}}))
        doc = self.resolved(capsys, "--config", str(config))
        assert doc["search"]["gamma_exp"] == 5
        doc = self.resolved(capsys, "--config", str(config), "--gamma-exp", "6")
        assert doc["search"]["gamma_exp"] == 6.0

    def test_unknown_search_key_is_config_fault(self, capsys, tmp_path):
        config = tmp_path / "c.json"
        config.write_text(json.dumps({"search": {"beem": 3}}))
        assert run_cli("config", "--config", str(config)) == EXIT_CONFIG
        assert "search.beem" in capsys.readouterr().err

    def test_invalid_search_value_is_config_fault(self, capsys):
        assert run_cli("config", "--n", "0") == EXIT_CONFIG

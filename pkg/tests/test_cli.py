"""End-to-end tests of the command line interface via CliRunner."""

import json
from pathlib import Path

import pytest
from click.testing import CliRunner

from workcell.cli import main
from workcell.config import ENV_CONFIG_VAR
from workcell.recorder import read_episode

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
UR5 = str(CONFIGS / "ur5_kinect4.json")
BIMANUAL = str(CONFIGS / "bimanual_rs3.json")


@pytest.fixture
def runner():
    return CliRunner()


def test_help_lists_all_subcommands(runner):
    res = runner.invoke(main, ["--help"])
    assert res.exit_code == 0
    for name in ("record", "eval", "serve", "replay", "validate"):
        assert name in res.output


def test_validate_accepts_shipped_configs(runner):
    for path in (UR5, BIMANUAL):
        res = runner.invoke(main, ["validate", path])
        assert res.exit_code == 0, res.output
        assert "config ok" in res.output


def test_validate_rejects_broken_config(runner, tmp_path):
    doc = json.loads(Path(UR5).read_text())
    doc["robot"]["control_rate_hz"] = -5
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(doc))
    res = runner.invoke(main, ["validate", str(bad)])
    assert res.exit_code == 1
    assert "invalid" in res.output


def test_validate_rejects_corrupt_episode_dir(runner, tmp_path):
    ep = tmp_path / "ep0000"
    ep.mkdir()
    (ep / "meta.json").write_text("{not json")
    res = runner.invoke(main, ["validate", str(ep)])
    assert res.exit_code == 1


def test_eval_requires_config(runner):
    res = runner.invoke(main, ["eval"], env={ENV_CONFIG_VAR: None})
    assert res.exit_code != 0


def test_eval_null_policy_reports_no_grasp(runner, tmp_path):
    out = tmp_path / "report.json"
    res = runner.invoke(main, [
        "eval", "--config", UR5, "--policy", "null", "--trials", "2",
        "--seed", "3", "--max-duration", "1.0", "--out", str(out)])
    assert res.exit_code == 0, res.output
    assert "success 0/2" in res.output
    assert "no_grasp: 2" in res.output
    doc = json.loads(out.read_text())
    assert doc["n_trials"] == 2
    assert doc["policy_id"] == "null"
    assert all(t["failure_mode"] == "no_grasp" for t in doc["trials"])


def test_eval_scripted_succeeds_via_env_config(runner, tmp_path):
    out = tmp_path / "report.json"
    res = runner.invoke(main, [
        "eval", "--trials", "1", "--seed", "7", "--out", str(out)],
        env={ENV_CONFIG_VAR: UR5})
    assert res.exit_code == 0, res.output
    assert "success 1/1" in res.output
    doc = json.loads(out.read_text())
    assert doc["trials"][0]["failure_mode"] == "none"


def test_record_then_validate_then_replay(runner, tmp_path):
    out = tmp_path / "dataset"
    res = runner.invoke(main, [
        "record", "--config", UR5, "--out", str(out),
        "--episodes", "1", "--seed", "11"])
    assert res.exit_code == 0, res.output
    assert "kept 1/1" in res.output

    ep = out / "ep0000"
    meta, records, frames = read_episode(ep)
    assert meta.frameset_count > 50
    assert meta.dropped_framesets == 0

    res = runner.invoke(main, ["validate", str(out)])
    assert res.exit_code == 0, res.output
    assert "dataset ok: 1 episodes" in res.output

    res = runner.invoke(main, ["validate", str(ep)])
    assert res.exit_code == 0, res.output
    assert "episode ok" in res.output

    res = runner.invoke(main, ["replay", str(ep)])
    assert res.exit_code == 0, res.output
    assert "ee path length" in res.output
    assert meta.episode_id in res.output


def test_record_discards_failed_episodes(runner, tmp_path):
    out = tmp_path / "dataset"
    res = runner.invoke(main, [
        "record", "--config", UR5, "--out", str(out),
        "--episodes", "1", "--seed", "0", "--max-duration", "0.5"])
    assert res.exit_code == 1
    assert "kept 0/1" in res.output
    assert not (out / "ep0000").exists()
    index = json.loads((out / "dataset.json").read_text())
    assert index["episodes"] == []

import io
import json
from pathlib import Path

import pytest

from src.evalbench.policies import ExpertPolicy
from src.main import EXIT_INVALID, EXIT_OK, EXIT_USAGE, dispatch
from src.model.chatvla import ChatVLA
from src.ui.chat_repl import PROMPT, chat_repl
from src.ui.rollout_view import rollout_view
from src.worldsim.datasets import load_dataset
from src.worldsim.render import render, render_ascii
from src.worldsim.tasks import generate_scene
from src.worldsim.vocab import TOKEN_TO_ID

SMOKE = str(Path(__file__).resolve().parents[1] / "config" / "experiments" / "smoke.cfg")


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """gen-data followed by stage 1, shared by the tests that need a checkpoint."""
    root = tmp_path_factory.mktemp("cli")
    data_dir = root / "data"
    code = dispatch(
        ["gen-data", "--config", SMOKE, "--tasks", "pick_cube_box", "--n", "1", "--n-vt", "8",
         "--reasoning", "--seed", "4", "--out", str(data_dir)]
    )
    assert code == EXIT_OK
    stage1_dir = root / "stage1"
    code = dispatch(
        ["train-stage1", "--config", SMOKE, "--robot", str(data_dir / "robot.jsonl"),
         "--steps", "2", "--out", str(stage1_dir)]
    )
    assert code == EXIT_OK
    return root


# =============================================================================
# Dispatch
# =============================================================================


class TestDispatch:
    def test_no_command_is_usage_error(self):
        assert dispatch([]) == EXIT_USAGE

    def test_unknown_command_is_usage_error(self, capsys):
        assert dispatch(["fly"]) == EXIT_USAGE
        assert "invalid choice" in capsys.readouterr().err

    def test_bad_flag_type_is_usage_error(self):
        assert dispatch(["gen-data", "--n", "many"]) == EXIT_USAGE

    def test_help_exits_cleanly(self):
        assert dispatch(["--help"]) == EXIT_OK

    def test_stage2_needs_checkpoint_or_scratch(self, tmp_path, capsys):
        assert dispatch(["train-stage2", "--out", str(tmp_path)]) == EXIT_INVALID
        assert "--checkpoint" in capsys.readouterr().err

    def test_bad_override_is_invalid_input(self, tmp_path):
        assert dispatch(["gen-data", "--set", "data.colour=red", "--out", str(tmp_path)]) == EXIT_INVALID

    def test_missing_dataset_is_invalid_input(self, tmp_path):
        missing = str(tmp_path / "nothing.jsonl")
        assert dispatch(["train-stage1", "--config", SMOKE, "--robot", missing, "--out", str(tmp_path)]) == EXIT_INVALID

    def test_vqa_needs_a_source(self, tmp_path):
        assert dispatch(["eval-vqa", "--config", SMOKE, "--out", str(tmp_path)]) == EXIT_INVALID

    def test_model_policy_needs_checkpoint(self, tmp_path):
        assert dispatch(["eval-control", "--config", SMOKE, "--out", str(tmp_path)]) == EXIT_INVALID


# =============================================================================
# Pipeline
# =============================================================================


class TestPipeline:
    def test_gen_data_outputs_and_manifest(self, pipeline):
        data_dir = pipeline / "data"
        assert (data_dir / "robot.jsonl").exists()
        assert (data_dir / "vt.jsonl").exists()
        manifest = json.loads((data_dir / "manifest.json").read_text())
        assert manifest["command"] == "gen-data"
        assert manifest["seed"] == 4
        assert manifest["outputs"] == ["robot.jsonl", "vt.jsonl"]
        assert manifest["config"]["data.n_per_task"] == "1"
        assert manifest["config"]["data.tasks"] == "pick_cube_box"
        assert "--reasoning" in manifest["argv"]
        assert manifest["config"]["data.with_reasoning"] == "true"
        assert "data.n_vt = 8" in (data_dir / "config.cfg").read_text()

    def test_gen_data_reasoning_from_config(self, tmp_path):
        config = tmp_path / "reasoning.cfg"
        config.write_text(Path(SMOKE).read_text() + "\ndata.with_reasoning = true\n")
        code = dispatch(
            ["gen-data", "--config", str(config), "--tasks", "pick_cube_box", "--n", "1", "--n-vt", "1",
             "--out", str(tmp_path / "on")]
        )
        assert code == EXIT_OK
        robot = load_dataset(tmp_path / "on" / "robot.jsonl")
        assert robot.with_reasoning
        assert all(step.reasoning for step in robot.episodes[0].steps)

        code = dispatch(
            ["gen-data", "--config", str(config), "--tasks", "pick_cube_box", "--n", "1", "--n-vt", "1",
             "--no-reasoning", "--out", str(tmp_path / "off")]
        )
        assert code == EXIT_OK
        assert not load_dataset(tmp_path / "off" / "robot.jsonl").with_reasoning

    def test_stage1_writes_checkpoint_and_log(self, pipeline):
        stage1_dir = pipeline / "stage1"
        assert (stage1_dir / "stage1.ckpt").exists()
        lines = (stage1_dir / "trainlog_stage1.jsonl").read_text().splitlines()
        assert [json.loads(line)["step"] for line in lines] == [1, 2]

    def test_inspect_checkpoint(self, pipeline, capsys):
        assert dispatch(["inspect-ckpt", str(pipeline / "stage1" / "stage1.ckpt")]) == EXIT_OK
        out = capsys.readouterr().out
        assert '"stage": 1' in out
        assert "text_head.w" in out
        assert "optimizer tensors" in out

    def test_inspect_missing_checkpoint(self, tmp_path):
        assert dispatch(["inspect-ckpt", str(tmp_path / "none.ckpt")]) == EXIT_INVALID

    def test_stage2_resumes(self, pipeline, capsys):
        out_dir = pipeline / "stage2"
        code = dispatch(
            ["train-stage2", "--config", SMOKE, "--checkpoint", str(pipeline / "stage1" / "stage1.ckpt"),
             "--robot", str(pipeline / "data" / "robot.jsonl"), "--vt", str(pipeline / "data" / "vt.jsonl"),
             "--ratio", "1:1", "--steps", "2", "--out", str(out_dir)]
        )
        assert code == EXIT_OK
        assert "1 vt / 1 robot" in capsys.readouterr().out
        manifest = json.loads((out_dir / "manifest.json").read_text())
        assert manifest["config"]["train.stage"] == "2"
        assert manifest["config"]["train.vt_to_robot_ratio"] == "1:1"

    def test_stage2_rejects_vt_file_as_robot_data(self, pipeline, tmp_path):
        vt = str(pipeline / "data" / "vt.jsonl")
        code = dispatch(
            ["train-stage2", "--config", SMOKE, "--from-scratch", "--robot", vt, "--vt", vt,
             "--steps", "1", "--out", str(tmp_path)]
        )
        assert code == EXIT_INVALID

    def test_eval_control_with_expert(self, tmp_path, capsys):
        code = dispatch(
            ["eval-control", "--config", SMOKE, "--policy", "expert", "--tasks", "pick_cube_box",
             "--trials", "1", "--out", str(tmp_path)]
        )
        assert code == EXIT_OK
        for name in ("control.csv", "control.jsonl", "control.txt", "manifest.json", "config.cfg"):
            assert (tmp_path / name).exists()
        assert "pick_cube_box" in capsys.readouterr().out

    def test_eval_vqa_oracle(self, tmp_path):
        code = dispatch(["eval-vqa", "--config", SMOKE, "--oracle", "--n", "4", "--out", str(tmp_path)])
        assert code == EXIT_OK
        assert (tmp_path / "vqa.jsonl").exists()

    def test_out_dir_from_environment(self, tmp_path, monkeypatch):
        monkeypatch.setenv("CHATVLA_OUT", str(tmp_path))
        code = dispatch(["eval-vqa", "--config", SMOKE, "--oracle", "--n", "4"])
        assert code == EXIT_OK
        assert (tmp_path / "smoke" / "manifest.json").exists()


# =============================================================================
# Viewers
# =============================================================================


class TestChat:
    def _chat(self, model, text):
        stdout = io.StringIO()
        code = chat_repl(model, render(generate_scene("pick_cube_box", 0)), io.StringIO(text), stdout)
        return code, stdout.getvalue()

    def test_quit_and_unknown_words(self, small_config):
        code, out = self._chat(ChatVLA(small_config, seed=0), "zebra cube\n\n/quit\nwhat color\n")
        assert code == 0
        assert "unknown words: zebra" in out
        assert out.count(PROMPT) == 3

    def test_answers_each_turn(self, small_config):
        model = ChatVLA(small_config, seed=0)
        model.params["text_head.w"].data[:] = 0.0
        model.params["text_head.b"].data[:] = 0.0
        model.params["text_head.b"].data[TOKEN_TO_ID["yes"]] = 10.0
        code, out = self._chat(model, "is there a red cube\nHow many objects\n")
        assert code == 0
        assert out.count("yes") >= 2

    def test_ends_on_eof(self, small_config):
        code, out = self._chat(ChatVLA(small_config, seed=0), "")
        assert code == 0
        assert out.endswith(PROMPT)

    def test_scene_frame_printed_first(self, small_config):
        stdout = io.StringIO()
        scene = generate_scene("pick_cube_box", 0)
        chat_repl(ChatVLA(small_config, seed=0), render(scene), io.StringIO("/quit\n"), stdout, scene=scene)
        assert stdout.getvalue().startswith(render_ascii(scene) + "\n")


class TestRolloutView:
    def test_expert_rollout_frames(self):
        stdout = io.StringIO()
        record = rollout_view(ExpertPolicy(), "pick_cube_box", 0, stdout)
        out = stdout.getvalue()
        assert out.startswith("frame 0 | task pick_cube_box seed 0")
        assert out.rstrip().splitlines()[-1] == f"result: {record.to_line()}"
        assert out.count("| sub-task ") == record.steps_used

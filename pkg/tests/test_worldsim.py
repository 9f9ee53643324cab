import json
from collections import Counter

import numpy as np
import pytest

from src.worldsim.datasets import (
    DatasetFormatError,
    RobotDataset,
    VTDataset,
    gen_demonstrations,
    load_dataset,
    replay_episode,
    run_expert_episode,
    save_dataset,
)
from src.worldsim.expert import expert_action
from src.worldsim.questions import (
    ANSWER_SETS,
    CATEGORIES,
    answer_question,
    chance_accuracy,
    gen_vt_samples,
)
from src.worldsim.reasoning import format_reasoning, parse_reasoning
from src.worldsim.render import render, render_ascii
from src.worldsim.scene import (
    GRASP_RADIUS,
    HANDLE_ID,
    Gripper,
    Scene,
    SceneObject,
    grid_cell,
    step_env,
)
from src.worldsim.tasks import (
    BOX,
    DRAWER,
    MIN_SPAWN_DISTANCE,
    TASKS,
    UnknownTaskError,
    generate_scene,
    get_task,
    resolve_task_ids,
)
from src.worldsim.vocab import (
    VOCAB,
    VOCAB_SIZE,
    VocabularyError,
    detokenize,
    tokenize,
    unknown_words,
    vocab_hash,
)


def single(obj: SceneObject, gx: float, gy: float, holding=None, receptacles=(BOX,)) -> Scene:
    return Scene((obj,), receptacles, Gripper(gx, gy, holding))


# =============================================================================
# Vocabulary
# =============================================================================


class TestVocab:
    def test_closed_size(self):
        assert len(VOCAB) == VOCAB_SIZE == 64
        assert len(set(VOCAB)) == 64

    def test_round_trip(self):
        text = "the red cube is at top left ."
        assert detokenize(tokenize(text)) == text

    def test_unknown_words(self):
        assert unknown_words("Put the Purple cube") == ["purple"]
        with pytest.raises(VocabularyError) as info:
            tokenize("fetch the cube")
        assert info.value.unknown == ["fetch"]

    def test_system_prompts_are_single_tokens(self):
        assert len(tokenize("Predict robot action")) == 1
        assert len(tokenize("Answer based on question")) == 1

    def test_hash_is_stable(self):
        assert vocab_hash() == vocab_hash()
        assert len(vocab_hash()) == 16


# =============================================================================
# Physics
# =============================================================================


class TestPhysics:
    def test_noop_returns_same_scene(self):
        scene = generate_scene("pick_cube_box", 0)
        assert step_env(scene, [0.0, 0.0, 0.0]) is scene

    def test_motion_is_scaled_and_clipped(self):
        scene = single(SceneObject("cube", "red", 0.5, 0.5), 0.98, 0.5)
        moved = step_env(scene, [1.0, 0.0, 0.0])
        assert moved.gripper.x == 1.0
        moved = step_env(scene, [-5.0, 0.0, 0.0])
        assert moved.gripper.x == pytest.approx(0.88)

    def test_nan_action_is_sanitized(self):
        scene = single(SceneObject("cube", "red", 0.5, 0.5), 0.2, 0.2)
        moved = step_env(scene, [np.nan, 1.0, 0.0])
        assert moved.gripper.x == pytest.approx(0.2)
        assert moved.gripper.y == pytest.approx(0.3)

    def test_grasp_carry_release(self):
        scene = single(SceneObject("cube", "red", 0.5, 0.5), 0.5 + GRASP_RADIUS / 2, 0.5)
        scene = step_env(scene, [0.0, 0.0, 1.0])
        assert scene.gripper.holding == 0
        scene = step_env(scene, [0.0, 1.0, 0.0])
        assert scene.objects[0].y == pytest.approx(0.6)
        scene = step_env(scene, [0.0, 0.0, 1.0])
        assert scene.gripper.holding is None

    def test_grasp_out_of_reach(self):
        scene = single(SceneObject("cube", "red", 0.5, 0.5), 0.5 + 2 * GRASP_RADIUS, 0.5)
        assert step_env(scene, [0.0, 0.0, 1.0]).gripper.holding is None

    def test_push_moves_block_ahead(self):
        scene = single(SceneObject("block", "red", 0.5, 0.5), 0.45, 0.5)
        pushed = step_env(scene, [0.5, 0.0, -1.0])
        assert pushed.objects[0].x == pytest.approx(0.55)

    def test_push_ignores_non_blocks(self):
        scene = single(SceneObject("ball", "red", 0.5, 0.5), 0.45, 0.5)
        assert step_env(scene, [0.5, 0.0, -1.0]).objects[0].x == 0.5

    def test_release_on_cube_stacks(self):
        bottom = SceneObject("cube", "blue", 0.5, 0.5)
        top = SceneObject("cube", "red", 0.52, 0.5)
        scene = Scene((top, bottom), (), Gripper(0.52, 0.5, holding=0))
        released = step_env(scene, [0.0, 0.0, 1.0])
        assert released.objects[0].on == 1
        assert released.is_covered(1)

    def test_drawer_opens_when_dragged(self):
        scene = Scene((), (DRAWER,), Gripper(DRAWER.handle_pos[0], DRAWER.handle_pos[1]))
        scene = step_env(scene, [0.0, 0.0, 1.0])
        assert scene.gripper.holding == HANDLE_ID
        for _ in range(2):
            scene = step_env(scene, [1.0, 0.0, 0.0])
        assert scene.drawer.drawer_open

    def test_grid_cell(self):
        assert grid_cell(0.1, 0.9) == ("top", "left")
        assert grid_cell(0.5, 0.5) == ("middle", "center")
        assert grid_cell(0.9, 0.1) == ("bottom", "right")


# =============================================================================
# Tasks and expert
# =============================================================================


class TestTasks:
    def test_registry(self):
        assert len(TASKS) == 8
        assert get_task("stack_cubes").n_subtasks == 2
        assert get_task("sort_toys").n_subtasks == 4
        with pytest.raises(UnknownTaskError):
            get_task("juggle")

    def test_resolve_all(self):
        assert resolve_task_ids(["all"]) == list(TASKS)
        assert resolve_task_ids(["push_block_box", "all"])[0] == "push_block_box"

    def test_generation_is_deterministic(self):
        assert generate_scene("sort_toys", 11) == generate_scene("sort_toys", 11)
        assert generate_scene("sort_toys", 11) != generate_scene("sort_toys", 12)

    def test_spawn_separation(self):
        scene = generate_scene("sort_toys", 4)
        points = [o.pos for o in scene.objects]
        for i in range(len(points)):
            for j in range(i + 1, len(points)):
                assert np.linalg.norm(points[i] - points[j]) >= MIN_SPAWN_DISTANCE

    def test_instructions_tokenize(self):
        for task_id, spec in TASKS.items():
            scene = generate_scene(task_id, 0)
            for k in range(spec.n_subtasks):
                assert tokenize(spec.instruction(scene, k))

    @pytest.mark.parametrize("task_id", list(TASKS))
    def test_expert_solves_every_task(self, task_id):
        for seed in (0, 1, 2):
            episode = run_expert_episode(task_id, seed)
            assert all(episode.success)
            assert len(episode.success) == get_task(task_id).n_subtasks

    def test_expert_idles_when_done(self):
        spec = get_task("pick_cube_box")
        obj = SceneObject("cube", "red", *BOX.center)
        scene = Scene((obj,), (BOX,), Gripper(0.5, 0.5))
        assert spec.is_done(scene, 0)
        np.testing.assert_array_equal(expert_action(scene, spec, 0), np.zeros(3))

    def test_replay_reproduces_success(self):
        episode = run_expert_episode("drawer_toy", 5)
        assert replay_episode(episode) == episode.success


# =============================================================================
# Rendering and reasoning
# =============================================================================


class TestRender:
    def test_image_shape_and_range(self):
        image = render(generate_scene("sort_toys", 0))
        assert image.shape == (32, 32, 3)
        assert image.min() >= 0.0 and image.max() <= 1.0

    def test_render_is_deterministic(self):
        scene = generate_scene("stack_cubes", 2)
        np.testing.assert_array_equal(render(scene), render(scene))

    def test_ascii_frame(self):
        frame = render_ascii(generate_scene("pick_cube_box", 0))
        lines = frame.splitlines()
        assert all(len(line) == 16 for line in lines[:16])
        assert "@" in frame and "c" in frame
        assert lines[16].startswith("0: ")


class TestReasoning:
    def test_format_parses_back(self):
        spec = get_task("stack_cubes")
        scene = generate_scene("stack_cubes", 3)
        text = format_reasoning(scene, spec, 0)
        fields = parse_reasoning(text)
        assert fields is not None
        assert fields.skill == "stack"
        assert fields.target.endswith("cube")
        assert tokenize(text)

    def test_parse_rejects_free_text(self):
        assert parse_reasoning("i will push it .") is None

    def test_reasoning_fits_context(self, small_config):
        for task_id, spec in TASKS.items():
            scene = generate_scene(task_id, 1)
            for k in range(spec.n_subtasks):
                n_text = 1 + len(tokenize(spec.instruction(scene, k))) + len(tokenize(format_reasoning(scene, spec, k))) + 1
                assert small_config.n_patches + n_text <= small_config.max_seq, task_id


# =============================================================================
# Visual questions
# =============================================================================


class TestQuestions:
    def test_round_robin_balance(self):
        samples = gen_vt_samples(10, 0)
        counts = [sum(s.category == c for s in samples) for c in CATEGORIES]
        assert max(counts) - min(counts) <= 1

    def test_category_histogram_at_eval_size(self):
        counts = Counter(s.category for s in gen_vt_samples(400, 3))
        assert set(counts) == set(CATEGORIES)
        assert all(99 <= n <= 101 for n in counts.values())

    def test_answers_are_ground_truth(self):
        for sample in gen_vt_samples(20, 1):
            assert answer_question(sample.scene, sample.question) == (sample.category, sample.answer)
            assert sample.answer in ANSWER_SETS[sample.category]

    def test_existence_alternates(self):
        answers = [s.answer for s in gen_vt_samples(16, 2) if s.category == "existence"]
        assert answers == ["yes", "no", "yes", "no"]

    def test_answer_question(self):
        scene = Scene(
            (SceneObject("cube", "red", 0.1, 0.9), SceneObject("ball", "red", 0.5, 0.5)), ()
        )
        assert answer_question(scene, "how many red objects") == ("count", "two")
        assert answer_question(scene, "where is the red cube") == ("spatial", "top left")
        assert answer_question(scene, "is there a blue ball") == ("existence", "no")
        assert answer_question(scene, "what color is the ball") == ("color", "red")
        with pytest.raises(ValueError):
            answer_question(scene, "why is the cube")

    def test_chance(self):
        assert chance_accuracy("existence") == 0.5
        assert chance_accuracy("spatial") == pytest.approx(1 / 9)

    def test_n_must_be_positive(self):
        with pytest.raises(ValueError):
            gen_vt_samples(0, 0)


# =============================================================================
# Datasets
# =============================================================================


class TestDatasets:
    def test_demonstrations(self, robot_data):
        assert isinstance(robot_data, RobotDataset)
        assert len(robot_data) == 4
        assert robot_data.with_reasoning
        assert all(step.reasoning for e in robot_data.episodes for step in e.steps)

    def test_action_chunks_pad_with_zeros(self, robot_data):
        episode = robot_data.episodes[0]
        chunks = episode.action_chunks(4)
        assert chunks.shape == (len(episode.steps), 4, 3)
        np.testing.assert_array_equal(chunks[-1, 1:], np.zeros((3, 3)))

    def test_seeds_differ_per_episode(self, robot_data):
        seeds = [e.seed for e in robot_data.episodes]
        assert len(set(seeds)) == len(seeds)

    @pytest.mark.parametrize("encoding", ["base64", "float"])
    def test_robot_save_load(self, tmp_path, robot_data, encoding):
        path = save_dataset(robot_data, tmp_path / "robot.jsonl", encoding)
        loaded = load_dataset(path)
        assert isinstance(loaded, RobotDataset)
        assert [e.task_id for e in loaded.episodes] == [e.task_id for e in robot_data.episodes]
        first, original = loaded.episodes[0].steps[0], robot_data.episodes[0].steps[0]
        np.testing.assert_allclose(first.image, original.image, atol=1e-12)
        assert first.reasoning == original.reasoning
        assert replay_episode(loaded.episodes[1]) == robot_data.episodes[1].success

    def test_vt_save_load(self, tmp_path, vt_data):
        loaded = load_dataset(save_dataset(vt_data, tmp_path / "vt.jsonl"))
        assert isinstance(loaded, VTDataset)
        assert [s.answer for s in loaded.samples] == [s.answer for s in vt_data.samples]
        assert loaded.samples[0].scene == vt_data.samples[0].scene

    def test_vocab_hash_mismatch(self, tmp_path, vt_data):
        path = save_dataset(vt_data, tmp_path / "vt.jsonl")
        lines = path.read_text().splitlines()
        header = json.loads(lines[0])
        header["vocab_hash"] = "0" * 16
        path.write_text("\n".join([json.dumps(header)] + lines[1:]) + "\n")
        with pytest.raises(DatasetFormatError, match="vocab_hash"):
            load_dataset(path)

    def test_missing_steps_rejected(self, tmp_path, robot_data):
        path = save_dataset(robot_data, tmp_path / "robot.jsonl")
        lines = path.read_text().splitlines()
        last_step = max(
            i for i, line in enumerate(lines)
            if json.loads(line)["type"] == "step" and json.loads(line)["episode"] == 0
        )
        path.write_text("\n".join(lines[:last_step] + lines[last_step + 1:]) + "\n")
        with pytest.raises(DatasetFormatError, match="episode 0 declares"):
            load_dataset(path)

    def test_malformed_records(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text("not json\n")
        with pytest.raises(DatasetFormatError):
            load_dataset(path)

    def test_n_per_task_must_be_positive(self):
        with pytest.raises(ValueError):
            gen_demonstrations(["pick_cube_box"], 0, False, 0)

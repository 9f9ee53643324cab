import itertools
from pathlib import Path

import numpy as np
import pytest

from src.evalbench.matrix import (
    CONDITIONS,
    FairnessError,
    MatrixData,
    PhasedCondition,
    RobotOnlyCondition,
    check_fairness,
    run_ratio_ablation,
    run_setting_matrix,
)
from src.evalbench.policies import ExpertPolicy, ModelPolicy, Policy, RandomPolicy
from src.evalbench.probe import gradient_cosine, grad_conflict_probe
from src.evalbench.report import EvalReport, MatrixReport, RolloutRecord
from src.evalbench.rollouts import (
    EVAL_SEED_OFFSET,
    as_policy,
    eval_seed,
    rollout_episode,
    run_control_eval,
)
from src.evalbench.scoring import ScoringError, avg_success_length, round_half_up, success_rate
from src.evalbench.vqa import OVERALL, ModelAnswerer, OracleAnswerer, run_vqa_eval, vqa_samples
from src.model.chatvla import ChatVLA
from src.trainer.batches import robot_sequences, vt_sequences
from src.trainer.checkpoint import Checkpoint
from src.trainer.config import TrainConfig
from src.trainer.phased import train_stage1, train_stage2
from src.utils.config_loader import load_config
from src.worldsim.datasets import TRAIN_SEED_STRIDE, VTDataset, gen_demonstrations
from src.worldsim.questions import ANSWER_SETS, chance_accuracy, gen_vt_samples
from src.worldsim.tasks import TASKS, generate_scene, get_task

SMOKE_CONFIG = Path(__file__).resolve().parents[1] / "config" / "experiments" / "smoke.cfg"

# (task, method, step success counts, trials, printed step rates, printed Avg. Len.)
LONG_HORIZON_RESULTS = [
    ("sort_toys", "octo", (3, 1, 0, 0), 13, (0.23, 0.08, 0.00, 0.00), 0.08),
    ("sort_toys", "openvla", (2, 1, 0, 0), 13, (0.15, 0.08, 0.00, 0.00), 0.06),
    ("sort_toys", "chatvla", (12, 9, 4, 3), 13, (0.92, 0.69, 0.31, 0.23), 0.54),
    ("stack_blocks", "octo", (2, 1), 7, (0.29, 0.14), 0.21),
    ("stack_blocks", "openvla", (3, 1), 7, (0.43, 0.14), 0.29),
    ("stack_blocks", "chatvla", (6, 3), 7, (0.86, 0.43), 0.64),
    ("toy_in_drawer", "octo", (1, 1, 1), 9, (0.11, 0.11, 0.11), 0.11),
    ("toy_in_drawer", "openvla", (2, 1, 1), 9, (0.22, 0.11, 0.11), 0.15),
    ("toy_in_drawer", "chatvla", (9, 9, 9), 9, (1.00, 1.00, 1.00), 1.00),
    ("clean_blocks", "octo", (3, 1), 6, (0.50, 0.17), 0.33),
    ("clean_blocks", "openvla", (3, 2), 6, (0.50, 0.33), 0.42),
    ("clean_blocks", "chatvla", (5, 4), 6, (0.83, 0.67), 0.75),
    ("block_then_toy", "octo", (5, 3, 2, 1), 12, (0.42, 0.25, 0.17, 0.08), 0.23),
    ("block_then_toy", "openvla", (5, 4, 4, 2), 12, (0.42, 0.33, 0.33, 0.17), 0.31),
    ("block_then_toy", "chatvla", (12, 11, 11, 11), 12, (1.00, 0.92, 0.92, 0.92), 0.94),
    ("two_blocks", "octo", (3, 2), 9, (0.33, 0.22), 0.28),
    ("two_blocks", "openvla", (4, 2), 9, (0.44, 0.22), 0.33),
    ("two_blocks", "chatvla", (8, 7), 9, (0.89, 0.78), 0.83),
    ("breakfast", "octo", (2, 1, 0), 13, (0.15, 0.08, 0.00), 0.08),
    ("breakfast", "openvla", (3, 1, 0), 13, (0.23, 0.08, 0.00), 0.10),
    ("breakfast", "chatvla", (9, 7, 7), 13, (0.69, 0.54, 0.54), 0.59),
]

# per-scene (successes, trials) and the printed pooled total
MULTI_TASK_RESULTS = {
    "octo": ([(3, 11), (0, 6), (1, 9), (0, 7), (0, 11), (3, 11), (1, 7), (2, 9), (1, 7), (2, 13), (2, 9), (3, 7)],
             (18, 107)),
    "openvla": ([(2, 11), (0, 6), (2, 9), (1, 7), (1, 11), (4, 11), (2, 7), (1, 9), (1, 7), (4, 13), (0, 9), (2, 7)],
                (20, 107)),
    "chatvla": ([(6, 11), (2, 6), (5, 9), (3, 7), (3, 11), (6, 11), (4, 7), (5, 9), (4, 7), (6, 13), (4, 9), (7, 7)],
                (55, 107)),
}
CHATVLA_RATES = (0.545, 0.333, 0.556, 0.429, 0.273, 0.545, 0.571, 0.556, 0.571, 0.462, 0.444, 1.0)
POOLED_RATES = {"octo": 0.17, "openvla": 0.19, "chatvla": 0.51}


class IdlePolicy(Policy):
    name = "idle"

    def act(self, scene, spec, subtask_index):
        return np.zeros(3)


@pytest.fixture
def smoke_config():
    return load_config(str(SMOKE_CONFIG), ["eval.n_trials=1", "data.tasks=pick_cube_box"])


@pytest.fixture
def matrix_data(robot_data, vt_data):
    return MatrixData(robot_data, vt_data, seed=3)


# =============================================================================
# Scoring
# =============================================================================


class TestScoring:
    @pytest.mark.parametrize(
        "counts, trials, expected",
        [
            ((12, 9, 4, 3), 13, 0.54),
            ((3, 1), 7, 0.29),
            ((9, 9, 9), 9, 1.00),
            ((0, 0), 5, 0.00),
        ],
    )
    def test_avg_len(self, counts, trials, expected):
        assert round_half_up(avg_success_length(counts, trials)) == expected

    @pytest.mark.parametrize(
        "successes, trials, places, expected",
        [(6, 11, 3, 0.545), (55, 107, 3, 0.514), (0, 7, 2, 0.0), (9, 14, 2, 0.64)],
    )
    def test_success_rate(self, successes, trials, places, expected):
        assert round_half_up(success_rate(successes, trials), places) == expected

    def test_half_up(self):
        assert round_half_up(0.125) == 0.13
        assert round_half_up(0.005) == 0.01
        assert round_half_up(0.5449, 3) == 0.545

    @pytest.mark.parametrize(
        "counts, trials",
        [((1, 2), 3), ((4,), 3), ((-1,), 3), ((), 3), ((1,), 0)],
    )
    def test_invalid_counts(self, counts, trials):
        with pytest.raises(ScoringError):
            avg_success_length(counts, trials)

    def test_invalid_rate(self):
        with pytest.raises(ScoringError):
            success_rate(4, 3)
        with pytest.raises(ScoringError):
            success_rate(0, 0)

    def test_avg_len_is_mean_of_step_rates(self):
        for trials in range(1, 5):
            for k in range(1, 4):
                for counts in itertools.product(range(trials + 1), repeat=k):
                    if any(counts[i] > counts[i - 1] for i in range(1, k)):
                        continue
                    value = avg_success_length(counts, trials)
                    assert 0.0 <= value <= 1.0
                    assert value == pytest.approx(np.mean([c / trials for c in counts]))
                    assert value <= counts[0] / trials

    @pytest.mark.parametrize(
        "counts, trials, step_rates, avg_len",
        [row[2:] for row in LONG_HORIZON_RESULTS],
        ids=[f"{task}-{method}" for task, method, *_ in LONG_HORIZON_RESULTS],
    )
    def test_reported_long_horizon_rows(self, counts, trials, step_rates, avg_len):
        assert tuple(round_half_up(success_rate(c, trials)) for c in counts) == step_rates
        assert round_half_up(avg_success_length(counts, trials)) == avg_len

    @pytest.mark.parametrize("method", sorted(MULTI_TASK_RESULTS))
    def test_reported_multi_task_rows(self, method):
        scenes, (successes, trials) = MULTI_TASK_RESULTS[method]
        assert (sum(s for s, _ in scenes), sum(t for _, t in scenes)) == (successes, trials)
        assert round_half_up(success_rate(successes, trials)) == POOLED_RATES[method]

    def test_reported_chatvla_scene_rates(self):
        scenes, _ = MULTI_TASK_RESULTS["chatvla"]
        assert tuple(round_half_up(success_rate(s, t), 3) for s, t in scenes) == CHATVLA_RATES


# =============================================================================
# Rollouts
# =============================================================================


class TestRollouts:
    def test_eval_seeds_never_collide_with_training(self):
        assert eval_seed(0, 0) == EVAL_SEED_OFFSET
        assert eval_seed(0, 0) > TRAIN_SEED_STRIDE * 10_000
        assert eval_seed(1, 3) != eval_seed(0, 3)

    def test_expert_ceiling(self):
        report = run_control_eval(ExpertPolicy(), ["pick_cube_box", "stack_cubes"], 2, seed=0)
        assert report.task_success == {"pick_cube_box": 1.0, "stack_cubes": 1.0}
        assert report.task_avg_len == {"pick_cube_box": 1.0, "stack_cubes": 1.0}
        assert report.step_counts["stack_cubes"] == [2, 2]
        assert report.overall_success == 1.0
        assert report.metadata["policy"] == "expert"
        assert len(report.records) == 4

    def test_halts_at_first_failure(self):
        record = rollout_episode(IdlePolicy(), "stack_cubes", 0, step_budget=3)
        assert record.success == (False, False)
        assert record.steps_used == 3
        assert record.completed == 0

    def test_callback_sees_every_step(self):
        seen = []
        record = rollout_episode(ExpertPolicy(), "pick_cube_box", 1, on_step=lambda s, k, a: seen.append(k))
        assert len(seen) == record.steps_used
        assert record.solved

    def test_random_policy_is_reproducible(self):
        first = rollout_episode(RandomPolicy(3), "sort_toys", 9, step_budget=10)
        second = rollout_episode(RandomPolicy(3), "sort_toys", 9, step_budget=10)
        assert first == second
        assert first.n_subtasks == get_task("sort_toys").n_subtasks

    def test_random_policy_report(self):
        report = run_control_eval(RandomPolicy(0), ["push_block_box"], 2, seed=0, step_budget=5)
        assert 0.0 <= report.overall_success <= 1.0
        assert report.trials == {"push_block_box": 2}

    @pytest.mark.slow
    def test_expert_ceiling_on_every_task(self):
        report = run_control_eval(ExpertPolicy(), ["all"], 100, seed=0)
        assert set(report.task_success) == set(TASKS)
        assert all(rate == 1.0 for rate in report.task_success.values())
        assert all(rate == 1.0 for rate in report.task_avg_len.values())

    @pytest.mark.slow
    def test_random_policy_rarely_sorts(self):
        report = run_control_eval(RandomPolicy(0), ["sort_toys"], 50, seed=0)
        assert report.task_avg_len["sort_toys"] < 0.05

    def test_invalid_trials(self):
        with pytest.raises(ValueError):
            run_control_eval(ExpertPolicy(), ["pick_cube_box"], 0, seed=0)

    def test_as_policy(self, small_config):
        model = ChatVLA(small_config)
        assert isinstance(as_policy(model), ModelPolicy)
        ckpt = Checkpoint.from_model(model, {"stage": 1, "train_config": {"with_reasoning": True}})
        policy = as_policy(ckpt)
        assert isinstance(policy, ModelPolicy) and policy.with_reasoning
        with pytest.raises(TypeError):
            as_policy("expert")

    def test_model_policy_replans_per_chunk(self, small_config):
        policy = ModelPolicy(ChatVLA(small_config))
        spec = get_task("planner_two_blocks")
        scene = generate_scene("planner_two_blocks", 0)
        policy.reset("planner_two_blocks", 0)
        actions = [policy.act(scene, spec, 0) for _ in range(5)]
        assert policy.n_plans == 2
        assert all(a.shape == (3,) and np.all(np.abs(a) <= 1.0) for a in actions)
        policy.act(scene, spec, 1)
        assert policy.n_plans == 3

    def test_model_rollout_is_reproducible(self, small_config):
        model = ChatVLA(small_config, seed=4)
        first = rollout_episode(ModelPolicy(model), "pick_cube_box", 5, step_budget=6)
        second = rollout_episode(ModelPolicy(model), "pick_cube_box", 5, step_budget=6)
        assert first == second


class TestRecords:
    def test_rejects_success_after_failure(self):
        with pytest.raises(ScoringError):
            RolloutRecord("stack_cubes", 0, (False, True), 10)

    def test_line(self):
        record = RolloutRecord("stack_cubes", 4, (True, False), 37)
        assert record.to_line() == "task=stack_cubes seed=4 subtasks=[1 0] completed=1/2 steps=37"

    def test_report_validation(self):
        with pytest.raises(ScoringError):
            EvalReport(task_success={"t": 1.5})
        with pytest.raises(ScoringError):
            EvalReport(step_counts={"t": [3]}, trials={"t": 2})

    def test_report_table_and_records(self):
        report = EvalReport(
            task_success={"stack_cubes": 0.5},
            task_avg_len={"stack_cubes": 0.625},
            step_counts={"stack_cubes": [3, 2]},
            trials={"stack_cubes": 4},
            overall_success=0.5,
            vqa_accuracy={"color": 0.125, OVERALL: 0.25},
            records=[RolloutRecord("stack_cubes", 1, (True, True), 20)],
        )
        table = report.to_table()
        assert "0.63" in table and "0.13" in table
        assert table.splitlines()[-1].startswith("overall")
        kinds = [r["kind"] for r in report.iter_records()]
        assert kinds == ["control", "vqa", "vqa", "rollout"]
        assert report.mean_avg_len == 0.625

    def test_matrix_report(self):
        report = MatrixReport()
        for seed, (a, d) in enumerate([(0.2, 0.4), (0.5, 0.3), (0.1, 0.6)]):
            report.add("A", seed, {"avg_len": a})
            report.add("D", seed, {"avg_len": d})
        assert report.conditions == ["A", "D"]
        assert report.wins("avg_len", "D", "A") == 2
        assert report.mean("D", "avg_len") == pytest.approx(1.3 / 3)
        table = report.to_table()
        assert "s0" in table and "mean" in table


# =============================================================================
# VQA
# =============================================================================


class TestVQA:
    def test_oracle_is_perfect(self):
        accuracy = run_vqa_eval(OracleAnswerer(), 12, seed=0)
        assert accuracy[OVERALL] == 1.0
        assert set(accuracy) == {"color", "count", "spatial", "existence", OVERALL}

    def test_held_out_from_training(self, vt_data):
        held_out = vqa_samples(8, 3)
        assert held_out[0].scene == vqa_samples(8, 3)[0].scene
        assert all(s.scene != t.scene for s in held_out for t in vt_data.samples)

    def test_ranked_mode_answers_from_closed_set(self, small_config):
        answerer = ModelAnswerer(ChatVLA(small_config), mode="ranked")
        for sample in vqa_samples(4, 0):
            assert answerer.answer(sample) in ANSWER_SETS[sample.category]

    def test_model_accuracy_in_range(self, small_config):
        accuracy = run_vqa_eval(ChatVLA(small_config), 4, seed=0, mode="exact")
        assert all(0.0 <= v <= 1.0 for v in accuracy.values())

    def test_unknown_mode(self, small_config):
        with pytest.raises(ValueError):
            ModelAnswerer(ChatVLA(small_config), mode="fuzzy")


# =============================================================================
# Gradient probe
# =============================================================================


class TestProbe:
    def test_cosine(self):
        assert gradient_cosine(np.array([1.0, 0.0]), np.array([0.0, 2.0])) == 0.0
        assert gradient_cosine(np.array([1.0, 1.0]), np.array([2.0, 2.0])) == pytest.approx(1.0)
        assert gradient_cosine(np.zeros(2), np.ones(2)) is None

    def test_one_entry_per_block(self, tiny_config, robot_data, vt_data):
        model = ChatVLA(tiny_config)
        robot = robot_sequences(robot_data, tiny_config, with_reasoning=True)[:3]
        vt = vt_sequences(vt_data)[:3]
        cosines = grad_conflict_probe(model, robot, vt)
        assert len(cosines) == tiny_config.n_layers
        assert all(c is not None and -1.0 <= c <= 1.0 for c in cosines)
        assert all(t.grad is None for t in model.params.values())

    def test_self_similarity(self, tiny_config, vt_data):
        model = ChatVLA(tiny_config)
        vt = vt_sequences(vt_data)[:3]
        assert grad_conflict_probe(model, vt, vt) == pytest.approx([1.0, 1.0])

    def test_accepts_checkpoint(self, tiny_config, robot_data, vt_data):
        ckpt = Checkpoint.from_model(ChatVLA(tiny_config), {"stage": 1})
        robot = robot_sequences(robot_data, tiny_config, with_reasoning=False)[:2]
        cosines = grad_conflict_probe(ckpt, robot, vt_sequences(vt_data)[:2], probe_seed=4)
        assert len(cosines) == 2


# =============================================================================
# Setting matrix
# =============================================================================


class FailingCondition(RobotOnlyCondition):
    key = "F"

    def execute(self):
        raise RuntimeError("diverged")


class LongerCondition(RobotOnlyCondition):
    key = "L"

    def plan(self, base):
        return [config for config in super().plan(base) for _ in range(2)]


class TestMatrix:
    def test_conditions_share_a_budget(self, smoke_config, matrix_data):
        conditions = [cls(smoke_config, 0, matrix_data) for cls in CONDITIONS]
        check_fairness(conditions)
        assert [c.key for c in conditions] == ["A", "B", "C", "D"]
        phased = conditions[-1]
        assert [c.stage for c in phased.stage_configs] == [1, 2]
        assert sum(c.total_steps for c in phased.stage_configs) == smoke_config.train.total_steps
        assert not conditions[0].stage_configs[0].with_reasoning
        assert conditions[1].stage_configs[0].with_reasoning

    def test_unfair_budget(self, smoke_config, matrix_data):
        with pytest.raises(FairnessError, match="total_steps"):
            check_fairness([RobotOnlyCondition(smoke_config, 0, matrix_data), LongerCondition(smoke_config, 0, matrix_data)])

    def test_too_few_seeds(self, smoke_config, matrix_data):
        with pytest.raises(ValueError):
            run_setting_matrix(smoke_config, 2, data=matrix_data)

    def test_failure_is_reported(self, smoke_config, matrix_data):
        result = FailingCondition(smoke_config, 0, matrix_data).run()
        assert result["success"] is False
        assert result["error"] == "diverged"

    def test_phased_condition_runs(self, tmp_path, smoke_config, matrix_data):
        condition = PhasedCondition(smoke_config, 1, matrix_data, log_dir=tmp_path)
        result = condition.run()
        assert result["success"], result["error"]
        assert set(result["details"]) == {"vqa_accuracy", "avg_len", "success_rate"}
        assert (tmp_path / "D_seed1_stage2.jsonl").exists()
        assert condition.checkpoint is None

    @pytest.mark.slow
    def test_full_matrix(self, tmp_path, smoke_config, matrix_data):
        report = run_setting_matrix(smoke_config, 3, data=matrix_data, log_dir=tmp_path)
        assert not report.failures
        assert report.conditions == ["A", "B", "C", "D"]
        assert report.seeds == [0, 1, 2]
        assert all(0.0 <= row["value"] <= 1.0 for row in report.rows)

    @pytest.mark.slow
    def test_ratio_ablation(self, smoke_config, matrix_data):
        report = run_ratio_ablation(smoke_config, 1, data=matrix_data)
        assert report.conditions == ["1:1", "3:1", "1:3"]
        assert set(report.metrics()) == {"vqa_accuracy", "avg_len", "success_rate"}


# =============================================================================
# Learning floor and condition orderings
# =============================================================================


@pytest.mark.slow
class TestLearning:
    @pytest.fixture(scope="class")
    def default_config(self):
        return load_config(None)

    def test_phased_training_reaches_the_floor(self, default_config):
        data = default_config.data
        robot = gen_demonstrations(["pick_cube_box"], data.n_per_task, True, data.seed)
        vt = VTDataset(gen_vt_samples(data.n_vt, data.seed))
        stage1 = train_stage1(TrainConfig(stage=1), robot, model_config=default_config.model)

        control = run_control_eval(stage1, ["pick_cube_box"], 50, seed=default_config.eval.seed)
        assert control.task_success["pick_cube_box"] >= 0.8

        stage2 = train_stage2(TrainConfig(stage=2), stage1, robot, vt)
        assert run_vqa_eval(stage2, 400, default_config.eval.seed)[OVERALL] >= 0.8

    def test_condition_orderings(self, default_config):
        report = run_setting_matrix(default_config, 3)
        assert not report.failures
        chance = max(chance_accuracy(c) for c in ANSWER_SETS)
        assert report.mean("A", "vqa_accuracy") <= chance + 0.05
        assert report.mean("D", "vqa_accuracy") > 0.8
        assert report.mean("D", "vqa_accuracy") >= report.mean("B", "vqa_accuracy")
        assert report.wins("vqa_accuracy", "B", "A") >= 2
        assert report.wins("avg_len", "D", "C") >= 2

import argparse
import json
import subprocess
import sys
import time
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional

from src import __version__
from src.evalbench.matrix import run_ratio_ablation, run_setting_matrix
from src.evalbench.policies import ExpertPolicy, RandomPolicy
from src.evalbench.rollouts import as_policy, run_control_eval
from src.evalbench.vqa import OracleAnswerer, run_vqa_eval
from src.evalbench.report import EvalReport
from src.trainer.checkpoint import load_checkpoint, save_checkpoint
from src.trainer.config import StageError
from src.trainer.phased import train_stage1, train_stage2
from src.ui.chat_repl import chat_repl, chat_scene, load_image
from src.ui.rollout_view import rollout_view
from src.utils.config_loader import ConfigLoader, RunConfig
from src.utils.logger import setup_logger
from src.utils.result_writer import write_eval_report, write_matrix_report
from src.worldsim.datasets import (
    DatasetFormatError,
    RobotDataset,
    VTDataset,
    gen_demonstrations,
    load_dataset,
    save_dataset,
)
from src.worldsim.questions import gen_vt_samples
from src.worldsim.render import render
from src.worldsim.tasks import resolve_task_ids

logger = setup_logger()

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INVALID = 2

# subcommand -> {argparse dest: dotted config key}
FLAG_KEYS: Dict[str, Dict[str, str]] = {
    "gen-data": {
        "tasks": "data.tasks",
        "n": "data.n_per_task",
        "n_vt": "data.n_vt",
        "seed": "data.seed",
        "image_encoding": "data.image_encoding",
        "reasoning": "data.with_reasoning",
    },
    "train-stage1": {"robot": "data.robot_path", "steps": "train.total_steps", "seed": "train.seed"},
    "train-stage2": {
        "robot": "data.robot_path",
        "vt": "data.vt_path",
        "steps": "train.total_steps",
        "seed": "train.seed",
        "ratio": "train.vt_to_robot_ratio",
    },
    "eval-control": {"tasks": "data.tasks", "trials": "eval.n_trials", "seed": "eval.seed"},
    "eval-vqa": {"n": "eval.n_vqa", "seed": "eval.seed", "mode": "eval.vqa_mode"},
    "experiment-matrix": {"seeds": "eval.matrix_seeds", "steps": "train.total_steps"},
    "ratio-ablation": {"steps": "train.total_steps"},
}

# settings a subcommand always pins
FIXED_KEYS = {
    "train-stage1": ["train.stage=1"],
    "train-stage2": ["train.stage=2"],
}


class UsageError(Exception):
    """Raised for a malformed command line"""

    pass


class CliParser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def parse_arguments(argv: Optional[List[str]] = None):
    """Parse command line arguments"""
    parser = CliParser(prog="chatvla", description="Desk-scale ChatVLA: data, training, evaluation")
    sub = parser.add_subparsers(dest="command", parser_class=CliParser)

    def command(name: str, help_text: str, outputs: bool = True):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", default=None, help="Dotted-key configuration file")
        p.add_argument(
            "--set", action="append", default=[], metavar="KEY=VALUE", help="Override one config key"
        )
        if outputs:
            p.add_argument("--out", default=None, help="Output directory (default: run.out_dir/run.name)")
        return p

    p = command("gen-data", "Generate robot demonstrations and VT samples")
    p.add_argument("--tasks", default=None, help="Comma-separated task ids or 'all'")
    p.add_argument("--n", type=int, default=None, help="Demonstrations per task")
    p.add_argument("--n-vt", dest="n_vt", type=int, default=None, help="Number of VT samples")
    p.add_argument("--reasoning", action="store_true", default=None, help="Attach reasoning to every step")
    p.add_argument(
        "--no-reasoning", dest="reasoning", action="store_false", default=None, help="Record steps without reasoning"
    )
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--image-encoding", dest="image_encoding", choices=["base64", "float"], default=None)

    p = command("train-stage1", "Stage 1: robot data only")
    p.add_argument("--robot", default=None, help="Robot dataset file")
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)

    p = command("train-stage2", "Stage 2: co-training on robot and VT data")
    p.add_argument("--checkpoint", default=None, help="Stage-1 checkpoint")
    p.add_argument("--from-scratch", dest="from_scratch", action="store_true", help="Start from fresh weights")
    p.add_argument("--robot", default=None)
    p.add_argument("--vt", default=None)
    p.add_argument("--ratio", default=None, help="vt:robot batch ratio, e.g. 1:3")
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)

    p = command("eval-control", "Closed-loop success rates and Avg. Len.")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--policy", choices=["model", "expert", "random"], default="model")
    p.add_argument("--tasks", default=None)
    p.add_argument("--trials", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)

    p = command("eval-vqa", "VQA accuracy by category")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--oracle", action="store_true", help="Answer from scene ground truth")
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--mode", choices=["exact", "ranked"], default=None)

    p = command("experiment-matrix", "Train and evaluate conditions A-D over seeds")
    p.add_argument("--seeds", type=int, default=None, help="Number of seeds (>= 3)")
    p.add_argument("--steps", type=int, default=None, help="Optimizer-step budget per condition")

    p = command("ratio-ablation", "Stage-2 vt:robot ratio ablation (1:1, 3:1, 1:3)")
    p.add_argument("--seeds", type=int, default=1)
    p.add_argument("--steps", type=int, default=None)

    p = command("chat", "Ask questions about one image", outputs=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", default=None, help="Image saved with numpy.save")
    p.add_argument("--scene-seed", dest="scene_seed", type=int, default=0)
    p.add_argument("--task", default=None, help="Render a task scene instead of a VQA scene")

    p = command("rollout", "Print ASCII frames of one rollout", outputs=False)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--policy", choices=["model", "expert", "random"], default="model")
    p.add_argument("--task", required=True)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("inspect-ckpt", help="Print checkpoint metadata and tensor inventory")
    p.add_argument("path")

    return parser, parser.parse_args(argv)


def _format_override(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def resolve_config(args) -> RunConfig:
    overrides = list(FIXED_KEYS.get(args.command, [])) + list(getattr(args, "set", []))
    for dest, key in FLAG_KEYS.get(args.command, {}).items():
        value = getattr(args, dest, None)
        if value is not None:
            overrides.append(f"{key}={_format_override(value)}")
    return ConfigLoader.load_config(getattr(args, "config", None), overrides)


def output_dir(args, config: RunConfig) -> Path:
    out = Path(args.out) if getattr(args, "out", None) else config.out_dir
    out.mkdir(parents=True, exist_ok=True)
    return out


def version_string() -> str:
    """`git describe` of the working tree, or the package version outside git."""
    try:
        proc = subprocess.run(
            ["git", "describe", "--tags", "--always", "--dirty"],
            capture_output=True,
            text=True,
            timeout=5,
        )
        if proc.returncode == 0 and proc.stdout.strip():
            return proc.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        pass
    return f"v{__version__}"


def write_manifest(out: Path, args, config: RunConfig, seed: int, wall_time: float, outputs: List[str]):
    (out / "config.cfg").write_text(ConfigLoader.dump(config))
    manifest = {
        "command": args.command,
        "argv": getattr(args, "argv", []),
        "seed": seed,
        "version": version_string(),
        "wall_time": round(wall_time, 3),
        "config": ConfigLoader.as_strings(config),
        "outputs": outputs,
    }
    with open(out / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
    logger.info(f"Wrote manifest to {out / 'manifest.json'}")


def _robot_data(path) -> RobotDataset:
    dataset = load_dataset(path)
    if not isinstance(dataset, RobotDataset):
        raise DatasetFormatError(f"{path} is not a robot dataset")
    return dataset


def _vt_data(path) -> VTDataset:
    dataset = load_dataset(path)
    if not isinstance(dataset, VTDataset):
        raise DatasetFormatError(f"{path} is not a vt dataset")
    return dataset


def _policy(args):
    if args.policy == "expert":
        return ExpertPolicy()
    if args.policy == "random":
        return RandomPolicy(args.seed or 0)
    if not args.checkpoint:
        raise ValueError("--policy model needs --checkpoint")
    return as_policy(load_checkpoint(args.checkpoint))


# subcommand handlers: (args, config, out) -> (exit code, seed, outputs)


def cmd_gen_data(args, config: RunConfig, out: Path):
    data = config.data
    robot = gen_demonstrations(resolve_task_ids(data.tasks), data.n_per_task, data.with_reasoning, data.seed)
    vt = VTDataset(gen_vt_samples(data.n_vt, data.seed))
    robot_path = save_dataset(robot, out / "robot.jsonl", data.image_encoding)
    vt_path = save_dataset(vt, out / "vt.jsonl", data.image_encoding)
    print(f"{len(robot)} episodes ({robot.n_steps} steps) -> {robot_path}")
    print(f"{len(vt)} vt samples -> {vt_path}")
    return EXIT_OK, data.seed, [robot_path.name, vt_path.name]


def cmd_train_stage1(args, config: RunConfig, out: Path):
    robot = _robot_data(config.data.robot_path)
    ckpt = train_stage1(config.train, robot, model_config=config.model, log_path=out / "trainlog_stage1.jsonl")
    path = save_checkpoint(ckpt, out / "stage1.ckpt")
    print(f"stage 1 done: {ckpt.step} steps -> {path}")
    return EXIT_OK, config.train.seed, [path.name, "trainlog_stage1.jsonl"]


def cmd_train_stage2(args, config: RunConfig, out: Path):
    if not args.checkpoint and not args.from_scratch:
        raise StageError("train-stage2 needs a stage-1 --checkpoint (or --from-scratch to start from fresh weights)")
    checkpoint = None if args.from_scratch else load_checkpoint(args.checkpoint)
    robot = _robot_data(config.data.robot_path)
    vt = _vt_data(config.data.vt_path)
    ckpt = train_stage2(
        config.train, checkpoint, robot, vt, model_config=config.model, log_path=out / "trainlog_stage2.jsonl"
    )
    path = save_checkpoint(ckpt, out / "stage2.ckpt")
    counts = ckpt.metadata["batch_counts"]
    print(f"stage 2 done: {ckpt.step} steps ({counts['vt']} vt / {counts['robot']} robot) -> {path}")
    return EXIT_OK, config.train.seed, [path.name, "trainlog_stage2.jsonl"]


def cmd_eval_control(args, config: RunConfig, out: Path):
    ev = config.eval
    report = run_control_eval(_policy(args), config.data.tasks, ev.n_trials, ev.seed, ev.step_budget)
    write_eval_report(report, out, "control")
    print(report.to_table())
    return EXIT_OK, ev.seed, ["control.csv", "control.jsonl", "control.txt"]


def cmd_eval_vqa(args, config: RunConfig, out: Path):
    ev = config.eval
    if args.oracle:
        source = OracleAnswerer()
    elif args.checkpoint:
        source = load_checkpoint(args.checkpoint)
    else:
        raise ValueError("eval-vqa needs --checkpoint or --oracle")
    accuracy = run_vqa_eval(source, ev.n_vqa, ev.seed, ev.vqa_mode)
    report = EvalReport(vqa_accuracy=accuracy, metadata={"n": ev.n_vqa, "seed": ev.seed, "mode": ev.vqa_mode})
    write_eval_report(report, out, "vqa")
    print(report.to_table())
    return EXIT_OK, ev.seed, ["vqa.csv", "vqa.jsonl", "vqa.txt"]


def cmd_experiment_matrix(args, config: RunConfig, out: Path):
    report = run_setting_matrix(config, config.eval.matrix_seeds, log_dir=out / "logs")
    write_matrix_report(report, out, "matrix")
    print(report.to_table())
    print(
        f"vqa D>B {report.wins('vqa_accuracy', 'D', 'B')}, B>A {report.wins('vqa_accuracy', 'B', 'A')}, "
        f"avg_len D>C {report.wins('avg_len', 'D', 'C')} of {len(report.seeds)} seeds"
    )
    for failure in report.failures:
        logger.error(f"Condition {failure['condition']} seed {failure['seed']} failed: {failure['error']}")
    code = EXIT_INVALID if report.failures else EXIT_OK
    return code, config.train.seed, ["matrix.csv", "matrix.jsonl", "matrix.txt"]


def cmd_ratio_ablation(args, config: RunConfig, out: Path):
    report = run_ratio_ablation(config, args.seeds, log_dir=out / "logs")
    write_matrix_report(report, out, "ratio_ablation")
    print(report.to_table(["vqa_accuracy", "avg_len"]))
    code = EXIT_INVALID if report.failures else EXIT_OK
    return code, config.train.seed, ["ratio_ablation.csv", "ratio_ablation.jsonl", "ratio_ablation.txt"]


def cmd_chat(args, config: RunConfig) -> int:
    model = load_checkpoint(args.checkpoint).to_model()
    if args.image:
        return chat_repl(model, load_image(args.image))
    scene = chat_scene(args.scene_seed, args.task)
    return chat_repl(model, render(scene), scene=scene)


def cmd_rollout(args, config: RunConfig) -> int:
    rollout_view(_policy(args), args.task, args.seed, step_budget=config.eval.step_budget)
    return EXIT_OK


def cmd_inspect_ckpt(args) -> int:
    ckpt = load_checkpoint(args.path)
    print(json.dumps(ckpt.metadata, indent=2, sort_keys=True))
    width = max(len(name) for name in ckpt.tensors)
    for name, value in ckpt.tensors.items():
        print(f"{name:<{width}}  {str(tuple(value.shape)):<14}  {value.size}")
    print(f"{len(ckpt.model_tensors)} model tensors, {len(ckpt.optimizer_tensors)} optimizer tensors")
    return EXIT_OK


RUNS: Dict[str, Callable] = {
    "gen-data": cmd_gen_data,
    "train-stage1": cmd_train_stage1,
    "train-stage2": cmd_train_stage2,
    "eval-control": cmd_eval_control,
    "eval-vqa": cmd_eval_vqa,
    "experiment-matrix": cmd_experiment_matrix,
    "ratio-ablation": cmd_ratio_ablation,
}
VIEWERS: Dict[str, Callable] = {"chat": cmd_chat, "rollout": cmd_rollout}


def dispatch(argv: Optional[List[str]] = None) -> int:
    """Route a command line to its subcommand; returns the exit code."""
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        parser, args = parse_arguments(argv)
    except UsageError as e:
        print(str(e), file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE
    if not args.command:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    args.argv = argv
    logger.info(f"Starting {args.command} with arguments: {argv}")

    try:
        if args.command == "inspect-ckpt":
            return cmd_inspect_ckpt(args)
        config = resolve_config(args)
        if args.command in VIEWERS:
            return VIEWERS[args.command](args, config)

        start = time.perf_counter()
        out = output_dir(args, config)
        code, seed, outputs = RUNS[args.command](args, config, out)
        write_manifest(out, args, config, seed, time.perf_counter() - start, outputs)
        return code
    except (ValueError, OSError) as e:
        logger.error(f"{args.command} failed: {str(e)}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID


def main(argv: Optional[List[str]] = None):
    sys.exit(dispatch(argv))


if __name__ == "__main__":
    main()

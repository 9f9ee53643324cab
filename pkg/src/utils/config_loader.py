# src/utils/config_loader.py
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, List, Optional, Tuple

from src.model.config import ModelConfig
from src.trainer.config import TrainConfig
from src.utils.logger import setup_logger

logger = setup_logger()


class ConfigValidationError(ValueError):
    """Raised when configuration validation fails"""

    pass


def _parse_bool(raw: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in ("true", "1", "yes", "on"):
        return True
    if lowered in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _parse_ratio(raw: str) -> Tuple[int, int]:
    parts = raw.strip().split(":")
    if len(parts) != 2:
        raise ValueError(f"ratio must look like a:b, got {raw!r}")
    ratio = (int(parts[0]), int(parts[1]))
    if min(ratio) < 1:
        raise ValueError(f"ratio components must be >= 1, got {raw!r}")
    return ratio


def _parse_list(raw: str) -> Tuple[str, ...]:
    return tuple(item.strip() for item in raw.split(",") if item.strip())


def _fmt_bool(value: bool) -> str:
    return "true" if value else "false"


def _fmt_ratio(value: Tuple[int, int]) -> str:
    return f"{value[0]}:{value[1]}"


def _fmt_list(value: Iterable[str]) -> str:
    return ",".join(value)


# type name -> (parser, formatter)
_CODECS: Dict[str, Tuple[Callable[[str], Any], Callable[[Any], str]]] = {
    "int": (lambda raw: int(raw.strip()), str),
    "float": (lambda raw: float(raw.strip()), repr),
    "bool": (_parse_bool, _fmt_bool),
    "str": (lambda raw: raw.strip(), str),
    "ratio": (_parse_ratio, _fmt_ratio),
    "list": (_parse_list, _fmt_list),
}


def _build_schema() -> Dict[str, Tuple[str, Any]]:
    """Documented key set: dotted key -> (type name, default)."""
    type_names = {int: "int", float: "float", bool: "bool", str: "str"}
    schema: Dict[str, Tuple[str, Any]] = {}

    for f in fields(ModelConfig):
        if f.name == "moe_enabled":
            continue  # derived from train.moe_enabled
        if f.name == "vocab_size":
            continue  # fixed by the closed vocabulary
        schema[f"model.{f.name}"] = (type_names[type(f.default)], f.default)
    for f in fields(TrainConfig):
        if f.name == "vt_to_robot_ratio":
            schema["train.vt_to_robot_ratio"] = ("ratio", f.default)
        else:
            schema[f"train.{f.name}"] = (type_names[type(f.default)], f.default)

    schema.update(
        {
            "data.robot_path": ("str", "data/robot.jsonl"),
            "data.vt_path": ("str", "data/vt.jsonl"),
            "data.tasks": ("list", ("all",)),
            "data.n_per_task": ("int", 50),
            "data.n_vt": ("int", 2000),
            "data.image_encoding": ("str", "base64"),
            "data.with_reasoning": ("bool", False),
            "data.seed": ("int", 7),
            "eval.n_trials": ("int", 50),
            "eval.n_vqa": ("int", 400),
            "eval.seed": ("int", 1),
            "eval.step_budget": ("int", 80),
            "eval.vqa_mode": ("str", "exact"),
            "eval.matrix_seeds": ("int", 5),
            "run.out_dir": ("str", "runs"),
            "run.name": ("str", "default"),
        }
    )
    return schema


SCHEMA = _build_schema()

_CHOICES = {
    "data.image_encoding": ("base64", "float"),
    "eval.vqa_mode": ("exact", "ranked"),
    "train.stage": (1, 2),
}


@dataclass(frozen=True)
class DataConfig:
    robot_path: str = "data/robot.jsonl"
    vt_path: str = "data/vt.jsonl"
    tasks: Tuple[str, ...] = ("all",)
    n_per_task: int = 50
    n_vt: int = 2000
    image_encoding: str = "base64"
    with_reasoning: bool = False
    seed: int = 7


@dataclass(frozen=True)
class EvalConfig:
    n_trials: int = 50
    n_vqa: int = 400
    seed: int = 1
    step_budget: int = 80
    vqa_mode: str = "exact"
    matrix_seeds: int = 5


@dataclass(frozen=True)
class RunSection:
    out_dir: str = "runs"
    name: str = "default"


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    run: RunSection = field(default_factory=RunSection)
    values: Dict[str, Any] = field(default_factory=dict, compare=False)

    @property
    def out_dir(self) -> Path:
        return Path(self.run.out_dir) / self.run.name


class ConfigLoader:
    @staticmethod
    def load_config(file_path: Optional[str], overrides: Optional[List[str]] = None) -> RunConfig:
        """Load, override and validate a dotted-key configuration file"""
        try:
            values = ConfigLoader.defaults()
            if file_path:
                with open(file_path, "r") as f:
                    values.update(ConfigLoader.parse_text(f.read(), source=str(file_path)))
            for item in overrides or []:
                values.update(ConfigLoader.parse_override(item))

            env_out = os.environ.get("CHATVLA_OUT")
            if env_out:
                values["run.out_dir"] = env_out

            return ConfigLoader.build(values)

        except ConfigValidationError as e:
            logger.error(f"Invalid configuration {file_path}: {str(e)}")
            raise
        except OSError as e:
            logger.error(f"Error loading config from {file_path}: {str(e)}")
            raise ConfigValidationError(f"cannot read {file_path}: {e}") from e

    @staticmethod
    def defaults() -> Dict[str, Any]:
        return {key: default for key, (_, default) in SCHEMA.items()}

    @staticmethod
    def parse_text(text: str, source: str = "<text>") -> Dict[str, Any]:
        """Parse `section.key = value` lines; unknown keys are rejected."""
        values: Dict[str, Any] = {}
        for lineno, line in enumerate(text.splitlines(), start=1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            if "=" not in stripped:
                raise ConfigValidationError(
                    f"{source}:{lineno}: expected 'key = value', got {line!r}"
                )
            key, raw = stripped.split("=", 1)
            key = key.strip()
            values[key] = ConfigLoader._coerce(key, raw, f"{source}:{lineno}")
        return values

    @staticmethod
    def parse_override(item: str) -> Dict[str, Any]:
        if "=" not in item:
            raise ConfigValidationError(f"override must be key=value, got {item!r}")
        key, raw = item.split("=", 1)
        key = key.strip()
        return {key: ConfigLoader._coerce(key, raw, "override")}

    @staticmethod
    def as_strings(config: RunConfig) -> Dict[str, str]:
        """Every schema key rendered in config-file syntax."""
        return {
            key: _CODECS[type_name][1](config.values[key]) for key, (type_name, _) in SCHEMA.items()
        }

    @staticmethod
    def dump(config: RunConfig) -> str:
        """Render the fully resolved configuration, one key per line."""
        lines = [f"{key} = {value}" for key, value in ConfigLoader.as_strings(config).items()]
        return "\n".join(lines) + "\n"

    @staticmethod
    def build(values: Dict[str, Any]) -> RunConfig:
        ConfigLoader._validate_structure(values)
        sections: Dict[str, Dict[str, Any]] = {}
        for key, value in values.items():
            section, name = key.split(".", 1)
            sections.setdefault(section, {})[name] = value
        sections["model"]["moe_enabled"] = sections["train"]["moe_enabled"]
        try:
            return RunConfig(
                model=ModelConfig(**sections["model"]),
                train=TrainConfig(**sections["train"]),
                data=DataConfig(**sections["data"]),
                eval=EvalConfig(**sections["eval"]),
                run=RunSection(**sections["run"]),
                values=dict(values),
            )
        except ValueError as e:
            raise ConfigValidationError(str(e)) from e

    @staticmethod
    def _coerce(key: str, raw: str, where: str) -> Any:
        if key not in SCHEMA:
            raise ConfigValidationError(f"{where}: unknown key {key!r}")
        type_name = SCHEMA[key][0]
        try:
            return _CODECS[type_name][0](raw)
        except ValueError as e:
            raise ConfigValidationError(
                f"{where}: field {key} must be of type {type_name}: {e}"
            ) from e

    @staticmethod
    def _validate_structure(values: Dict[str, Any]):
        """Validate key set and enumerated choices"""
        missing = [key for key in SCHEMA if key not in values]
        if missing:
            raise ConfigValidationError(f"Missing required field: {missing[0]}")
        for key in values:
            if key not in SCHEMA:
                raise ConfigValidationError(f"unknown key {key!r}")
        for key, choices in _CHOICES.items():
            if values[key] not in choices:
                raise ConfigValidationError(
                    f"Field {key} must be one of {choices}, got {values[key]!r}"
                )
        for key in ("data.n_per_task", "data.n_vt", "eval.n_trials", "eval.n_vqa", "eval.step_budget"):
            if values[key] < 1:
                raise ConfigValidationError(f"Field {key} must be >= 1, got {values[key]}")


# Function to expose for direct import
def load_config(file_path: Optional[str], overrides: Optional[List[str]] = None) -> RunConfig:
    """Load configuration file"""
    return ConfigLoader.load_config(file_path, overrides)

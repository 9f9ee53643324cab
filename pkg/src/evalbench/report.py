from dataclasses import dataclass, field
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple

from src.evalbench.scoring import ScoringError, round_half_up


@dataclass(frozen=True)
class RolloutRecord:
    task_id: str
    seed: int
    success: Tuple[bool, ...]
    steps_used: int

    def __post_init__(self):
        flags = tuple(bool(s) for s in self.success)
        object.__setattr__(self, "success", flags)
        for k in range(1, len(flags)):
            if flags[k] and not flags[k - 1]:
                raise ScoringError(
                    f"{self.task_id} seed {self.seed}: sub-task {k} succeeded after a failure"
                )

    @property
    def completed(self) -> int:
        return sum(self.success)

    @property
    def n_subtasks(self) -> int:
        return len(self.success)

    @property
    def solved(self) -> bool:
        return self.completed == self.n_subtasks

    def to_line(self) -> str:
        flags = " ".join("1" if s else "0" for s in self.success)
        return (
            f"task={self.task_id} seed={self.seed} subtasks=[{flags}] "
            f"completed={self.completed}/{self.n_subtasks} steps={self.steps_used}"
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "task_id": self.task_id,
            "seed": self.seed,
            "success": list(self.success),
            "steps_used": self.steps_used,
        }


@dataclass
class EvalReport:
    task_success: Dict[str, float] = field(default_factory=dict)
    task_avg_len: Dict[str, float] = field(default_factory=dict)
    step_counts: Dict[str, List[int]] = field(default_factory=dict)
    trials: Dict[str, int] = field(default_factory=dict)
    overall_success: Optional[float] = None
    vqa_accuracy: Dict[str, float] = field(default_factory=dict)
    metadata: Dict[str, Any] = field(default_factory=dict)
    records: List[RolloutRecord] = field(default_factory=list, compare=False)

    def __post_init__(self):
        rates = list(self.task_success.values()) + list(self.task_avg_len.values())
        rates += list(self.vqa_accuracy.values())
        if self.overall_success is not None:
            rates.append(self.overall_success)
        for rate in rates:
            if not 0.0 <= rate <= 1.0:
                raise ScoringError(f"rate {rate} outside [0, 1]")
        for task_id, counts in self.step_counts.items():
            if any(c > self.trials.get(task_id, 0) for c in counts):
                raise ScoringError(f"{task_id}: step counts {counts} exceed {self.trials.get(task_id)} trials")

    @property
    def mean_avg_len(self) -> Optional[float]:
        if not self.task_avg_len:
            return None
        return sum(self.task_avg_len.values()) / len(self.task_avg_len)

    def to_table(self) -> str:
        """Aligned text table, rates rounded half-up to 2 decimals."""
        lines: List[str] = []
        if self.task_success:
            width = max(len("task"), *(len(t) for t in self.task_success))
            lines.append(f"{'task':<{width}}  {'trials':>6}  {'success':>7}  {'avg_len':>7}  step_counts")
            for task_id in self.task_success:
                counts = ",".join(str(c) for c in self.step_counts.get(task_id, []))
                lines.append(
                    f"{task_id:<{width}}  {self.trials[task_id]:>6}  "
                    f"{round_half_up(self.task_success[task_id]):>7.2f}  "
                    f"{round_half_up(self.task_avg_len[task_id]):>7.2f}  {counts}"
                )
            lines.append(f"{'avg':<{width}}  {'':>6}  {round_half_up(self.overall_success):>7.2f}")
        if self.vqa_accuracy:
            if lines:
                lines.append("")
            width = max(len("category"), *(len(c) for c in self.vqa_accuracy))
            lines.append(f"{'category':<{width}}  {'accuracy':>8}")
            for category, accuracy in self.vqa_accuracy.items():
                lines.append(f"{category:<{width}}  {round_half_up(accuracy):>8.2f}")
        return "\n".join(lines)

    def iter_records(self) -> Iterator[Dict[str, Any]]:
        """Line-delimited machine records: one per task, per VQA category, per rollout."""
        for task_id in self.task_success:
            yield {
                "kind": "control",
                "task_id": task_id,
                "trials": self.trials[task_id],
                "success_rate": self.task_success[task_id],
                "avg_len": self.task_avg_len[task_id],
                "step_counts": self.step_counts[task_id],
            }
        for category, accuracy in self.vqa_accuracy.items():
            yield {"kind": "vqa", "category": category, "accuracy": accuracy}
        for record in self.records:
            yield {"kind": "rollout", **record.to_dict()}

    def summary_rows(self) -> List[Dict[str, Any]]:
        rows = [
            {"name": task_id, "metric": "success_rate", "value": round_half_up(rate)}
            for task_id, rate in self.task_success.items()
        ]
        rows += [
            {"name": task_id, "metric": "avg_len", "value": round_half_up(value)}
            for task_id, value in self.task_avg_len.items()
        ]
        rows += [
            {"name": category, "metric": "vqa_accuracy", "value": round_half_up(value)}
            for category, value in self.vqa_accuracy.items()
        ]
        return rows


@dataclass
class MatrixReport:
    """One row per (condition, seed, metric)."""

    rows: List[Dict[str, Any]] = field(default_factory=list)
    failures: List[Dict[str, Any]] = field(default_factory=list)
    metadata: Dict[str, Any] = field(default_factory=dict)

    def add(self, condition: str, seed: int, metrics: Dict[str, float]):
        for metric, value in metrics.items():
            self.rows.append({"condition": condition, "seed": seed, "metric": metric, "value": value})

    @property
    def conditions(self) -> List[str]:
        return list(dict.fromkeys(r["condition"] for r in self.rows))

    @property
    def seeds(self) -> List[int]:
        return list(dict.fromkeys(r["seed"] for r in self.rows))

    def values(self, condition: str, metric: str) -> Dict[int, float]:
        return {
            r["seed"]: r["value"]
            for r in self.rows
            if r["condition"] == condition and r["metric"] == metric
        }

    def wins(self, metric: str, better: str, worse: str) -> int:
        """Seeds on which `better` scores strictly above `worse`."""
        a, b = self.values(better, metric), self.values(worse, metric)
        return sum(1 for seed in a if seed in b and a[seed] > b[seed])

    def mean(self, condition: str, metric: str) -> float:
        values = list(self.values(condition, metric).values())
        return sum(values) / len(values) if values else float("nan")

    def metrics(self) -> List[str]:
        return list(dict.fromkeys(r["metric"] for r in self.rows))

    def to_table(self, metrics: Optional[Sequence[str]] = None) -> str:
        metrics = list(metrics or self.metrics())
        seeds = self.seeds
        width = max([len("condition")] + [len(c) for c in self.conditions])
        lines = []
        for metric in metrics:
            header = f"{metric:<{width}}  " + "  ".join(f"{'s' + str(s):>6}" for s in seeds) + f"  {'mean':>6}"
            lines.append(header)
            for condition in self.conditions:
                values = self.values(condition, metric)
                cells = "  ".join(
                    f"{round_half_up(values[s]):>6.2f}" if s in values else f"{'-':>6}" for s in seeds
                )
                lines.append(f"{condition:<{width}}  {cells}  {round_half_up(self.mean(condition, metric)):>6.2f}")
            lines.append("")
        return "\n".join(lines).rstrip()

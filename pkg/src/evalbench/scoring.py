"""
Control success metrics.

A trial of a K-step task earns one point per completed sub-task. Steps are
scored in order and evaluation halts at the first failure, so per-step
success counts never increase with the step index.
"""

from decimal import ROUND_HALF_UP, Decimal
from typing import Sequence


class ScoringError(ValueError):
    """Raised when success counts are inconsistent"""

    pass


def success_rate(successes: int, trials: int) -> float:
    if trials < 1:
        raise ScoringError(f"trials must be >= 1, got {trials}")
    if not 0 <= successes <= trials:
        raise ScoringError(f"successes={successes} outside [0, {trials}]")
    return successes / trials


def avg_success_length(step_success_counts: Sequence[int], trials: int) -> float:
    """Mean of the per-step success rates: sum(counts) / (K * trials)."""
    counts = [int(c) for c in step_success_counts]
    if trials < 1:
        raise ScoringError(f"trials must be >= 1, got {trials}")
    if not counts:
        raise ScoringError("step_success_counts is empty")
    for k, count in enumerate(counts):
        if not 0 <= count <= trials:
            raise ScoringError(f"step {k}: count {count} outside [0, {trials}]")
        if k and count > counts[k - 1]:
            raise ScoringError(
                f"step {k}: count {count} exceeds step {k - 1} count {counts[k - 1]} "
                f"(success counts must be non-increasing)"
            )
    return sum(counts) / (len(counts) * trials)


def round_half_up(value: float, places: int = 2) -> float:
    """Decimal rounding as printed in reports: 0.125 -> 0.13, not 0.12."""
    quantum = Decimal(1).scaleb(-places)
    return float(Decimal(repr(value)).quantize(quantum, rounding=ROUND_HALF_UP))

import math
from typing import Callable, Dict

import numpy as np

from src.tensor_core.tensor import Tensor
from src.utils.logger import setup_logger

logger = setup_logger("gradcheck")


def finite_diff_check(f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-4) -> float:
    """
    Compare the analytic gradient of f at x with central differences.

    Returns max_i |analytic_i - numeric_i| / max(1, |analytic_i|). A
    non-finite evaluation is reported (with its coordinate) as +inf.
    """
    if not 0.0 < eps <= 1e-2:
        raise ValueError(f"eps must lie in (0, 1e-2], got {eps}")
    if not x.requires_grad:
        raise ValueError("finite_diff_check needs x.requires_grad=True")

    x.zero_grad()
    loss = f(x)
    loss.backward()
    analytic = x.grad.copy().reshape(-1)

    flat = x.data.reshape(-1)
    worst = 0.0
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + eps
        f_plus = float(f(x).data)
        flat[i] = original - eps
        f_minus = float(f(x).data)
        flat[i] = original

        numeric = (f_plus - f_minus) / (2.0 * eps)
        if not (math.isfinite(numeric) and math.isfinite(analytic[i])):
            logger.warning(f"Non-finite value at coordinate {i} of {x.name or x.shape}")
            return math.inf
        error = abs(analytic[i] - numeric) / max(1.0, abs(analytic[i]))
        worst = max(worst, error)

    return worst


def check_gradients(
    loss_fn: Callable[[], Tensor], params: Dict[str, Tensor], eps: float = 1e-4
) -> Dict[str, float]:
    """Run finite_diff_check on every named parameter of a closed-over loss."""
    report = {}
    for name, tensor in params.items():
        report[name] = finite_diff_check(lambda _x: loss_fn(), tensor, eps)
    worst = max(report, key=report.get) if report else None
    if worst is not None:
        logger.info(f"Gradient check worst parameter {worst}: {report[worst]:.3e}")
    return report


def random_tensor(rng: np.random.Generator, shape, requires_grad: bool = True, scale: float = 1.0):
    return Tensor(rng.normal(0.0, scale, size=shape), requires_grad=requires_grad)

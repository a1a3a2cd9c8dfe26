from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Tuple

import numpy as np

from .tensor import Tensor, backward, no_grad


class NonDeterministicFunction(RuntimeError):
    pass


@dataclass
class GradCheckReport:
    tolerance: float
    max_rel_error: float = 0.0
    checked: int = 0
    worst: Tuple[str, tuple] = ("", ())
    errors: List[float] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def relative_error(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), 1e-8)


def grad_check(
    fn: Callable[[], Tensor],
    params: Dict[str, Tensor],
    eps: float = 1e-5,
    tolerance: float = 1e-4,
    n_coords: int = 100,
    seed: int = 0,
) -> GradCheckReport:
    """Compare tape gradients of ``fn()`` against central finite differences.

    ``fn`` must rebuild the scalar loss from ``params`` on each call. Parameters
    should be float64 (see :func:`attrewrite.autodiff.precision`). Up to
    ``n_coords`` coordinates are sampled across all parameters.
    """
    for p in params.values():
        p.grad = None
    loss = fn()
    base = float(loss.data)
    backward(loss)
    with no_grad():
        if float(fn().data) != base:
            raise NonDeterministicFunction("two forward evaluations disagree")

    rng = np.random.default_rng(seed)
    coords = [(name, idx) for name, p in params.items() for idx in np.ndindex(p.shape)]
    if len(coords) > n_coords:
        pick = rng.choice(len(coords), size=n_coords, replace=False)
        coords = [coords[i] for i in sorted(pick)]

    report = GradCheckReport(tolerance=tolerance)
    for name, idx in coords:
        p = params[name]
        g_ad = 0.0 if p.grad is None else float(p.grad[idx])
        orig = p.data[idx]
        with no_grad():
            p.data[idx] = orig + eps
            up = float(fn().data)
            p.data[idx] = orig - eps
            down = float(fn().data)
            p.data[idx] = orig
        g_fd = (up - down) / (2 * eps)
        err = relative_error(g_ad, g_fd)
        report.errors.append(err)
        report.checked += 1
        if err > report.max_rel_error:
            report.max_rel_error = err
            report.worst = (name, idx)
    return report

"""Finite-difference verification of analytic gradients.

The check perturbs parameter entries in place and re-evaluates the loss
closure, so the closure must rebuild its graph from the live parameter
values on every call (which is how all textmix forwards work).
"""

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .tensor import Tensor


@dataclass
class ParamCheck:
    name: str
    n_checked: int
    max_rel_error: float
    worst_index: int
    analytic_at_worst: float
    numeric_at_worst: float


@dataclass
class GradCheckReport:
    step: float
    tol: float
    params: list = field(default_factory=list)

    @property
    def max_rel_error(self) -> float:
        return max((p.max_rel_error for p in self.params), default=0.0)

    @property
    def passed(self) -> bool:
        return all(p.max_rel_error < self.tol for p in self.params)

    def summary(self) -> str:
        lines = []
        for p in self.params:
            status = "ok" if p.max_rel_error < self.tol else "FAIL"
            lines.append(
                f"{status:4s} {p.name:32s} checked={p.n_checked:4d} "
                f"max_rel_err={p.max_rel_error:.3e}"
            )
        verdict = "PASS" if self.passed else "FAIL"
        lines.append(f"{verdict}: max relative error {self.max_rel_error:.3e} "
                     f"(tol {self.tol:.1e}, step {self.step:.1e})")
        return "\n".join(lines)


def finite_diff_check(
    loss_fn: Callable[[], Tensor],
    params: Sequence,
    step: float = 1e-5,
    tol: float = 1e-4,
    max_coords: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> GradCheckReport:
    """Compare analytic gradients of loss_fn against central differences.

    params: iterable of (name, Tensor) pairs. Relative error per entry is
    |analytic - numeric| / max(1, |analytic|). When max_coords is set,
    that many coordinates per parameter are sampled (deterministically
    from rng, default seed 0) instead of sweeping all of them.
    """
    if step <= 0.0:
        raise ValueError(f"step must be positive, got {step}")
    params = list(params)
    if rng is None:
        rng = np.random.default_rng(0)

    for _, p in params:
        p.grad = None
    loss = loss_fn()
    loss.backward()
    analytic = {}
    for name, p in params:
        if p.grad is None:
            raise ValueError(f"parameter {name!r} received no gradient")
        analytic[name] = p.grad.copy()

    report = GradCheckReport(step=step, tol=tol)
    for name, p in params:
        flat = p.values.reshape(-1)
        n = flat.shape[0]
        if max_coords is not None and max_coords < n:
            coords = np.sort(rng.choice(n, size=max_coords, replace=False))
        else:
            coords = np.arange(n)
        aflat = analytic[name].reshape(-1)
        worst = ParamCheck(name, len(coords), 0.0, -1, 0.0, 0.0)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + step
            up = loss_fn().item()
            flat[i] = orig - step
            down = loss_fn().item()
            flat[i] = orig
            numeric = (up - down) / (2.0 * step)
            rel = abs(aflat[i] - numeric) / max(1.0, abs(aflat[i]))
            if rel > worst.max_rel_error:
                worst.max_rel_error = rel
                worst.worst_index = int(i)
                worst.analytic_at_worst = float(aflat[i])
                worst.numeric_at_worst = float(numeric)
        report.params.append(worst)
    return report

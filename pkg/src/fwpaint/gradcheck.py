"""Central finite-difference verification of tape gradients."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .tensor import Tape, Tensor, backward


@dataclass
class GradCheckResult:
    name: str
    max_rel_error: float
    tolerance: float
    checked: int

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.max_rel_error)) and self.max_rel_error < self.tolerance


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max absolute deviation, scaled by the magnitude of the numeric gradient.

    The scale is floored at 1e-8 so that an all-zero gradient compares by
    absolute error instead of dividing by zero.
    """
    scale = max(float(np.max(np.abs(numeric), initial=0.0)), 1e-8)
    return float(np.max(np.abs(analytic - numeric), initial=0.0)) / scale


def check_gradients(
    fn: Callable[[], Tensor],
    inputs: Sequence[Tensor],
    eps: float = 1e-4,
    tolerance: float = 1e-5,
    max_entries: int | None = None,
    rng: np.random.Generator | None = None,
    name: str = "",
) -> GradCheckResult:
    """Compare the tape gradient of scalar ``fn()`` to central differences.

    ``inputs`` are perturbed in place (and restored). When ``max_entries`` is
    given only that many randomly chosen coordinates per input are probed.
    """
    rng = rng or np.random.default_rng(0)
    for t in inputs:
        t.grad = None
        t.requires_grad = True
    with Tape():
        loss = fn()
    backward(loss)

    # one scale for the whole check, so an input whose true gradient is zero
    # is judged against the overall gradient size rather than the 1e-8 floor
    all_a, all_n = [], []
    for t in inputs:
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = rng.choice(flat.size, size=max_entries, replace=False)
        numeric = np.empty(len(idx))
        for n, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + eps
            up = float(fn().data)
            flat[i] = orig - eps
            down = float(fn().data)
            flat[i] = orig
            numeric[n] = (up - down) / (2 * eps)
        all_a.append(analytic.reshape(-1)[idx])
        all_n.append(numeric)
    a, n = np.concatenate(all_a), np.concatenate(all_n)
    return GradCheckResult(name, relative_error(a, n), tolerance, len(a))

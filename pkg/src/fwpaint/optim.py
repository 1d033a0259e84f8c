"""Adam with bias correction, operating in place on named parameter tensors."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import NumericError, Tensor


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray | None] | None, state: AdamState,
              lr: float, beta1: float = 0.5, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One Adam update. Missing gradients (``None``) count as zero.

    ``grads`` defaults to each parameter's ``.grad``. Raises
    :class:`NumericError` naming the offending parameter on a non-finite
    gradient, before anything is modified.
    """
    if grads is None:
        grads = {k: p.grad for k, p in params.items()}
    for name, g in grads.items():
        if g is not None and not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {name!r}")
    state.t += 1
    t = state.t
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * (g * g)
        state.m[name] = m.astype(p.dtype, copy=False)
        state.v[name] = v.astype(p.dtype, copy=False)
        step = (lr / c1) * m / (np.sqrt(v / c2) + eps)
        p.data = (p.data - step).astype(p.dtype, copy=False)


class Adam:
    def __init__(self, params: dict[str, Tensor], lr: float, beta1: float = 0.5,
                 beta2: float = 0.999, eps: float = 1e-8) -> None:
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.state = AdamState()

    def step(self) -> None:
        adam_step(self.params, None, self.state, self.lr, self.beta1, self.beta2, self.eps)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

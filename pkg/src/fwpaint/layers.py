"""Parameter containers and the small building blocks shared by the models."""
from __future__ import annotations

import hashlib
from typing import Iterable

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Model:
    """Base for networks holding a flat ``name -> Tensor`` parameter dict."""

    params: dict[str, Tensor]

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def named_parameters(self) -> Iterable[tuple[str, Tensor]]:
        return self.params.items()

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def set_trainable(self, flag: bool) -> None:
        for p in self.params.values():
            p.requires_grad = flag

    def state_arrays(self, prefix: str = "") -> dict[str, np.ndarray]:
        return {prefix + k: v.data for k, v in self.params.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray], prefix: str = "") -> None:
        for k, p in self.params.items():
            arr = arrays[prefix + k]
            if arr.shape != p.shape:
                raise T.DimensionError(f"parameter {prefix + k}: stored shape {arr.shape} != model shape {p.shape}")
            p.data = np.array(arr, dtype=p.dtype, copy=True)

    def fingerprint(self) -> str:
        """SHA-256 over parameter names and raw bytes."""
        h = hashlib.sha256()
        for k in sorted(self.params):
            h.update(k.encode())
            h.update(np.ascontiguousarray(self.params[k].data).tobytes())
        return h.hexdigest()


def uniform_init(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, dtype) -> Tensor:
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype), requires_grad=True)


def zeros_param(shape: tuple[int, ...], dtype) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ w.T + b`` with ``w`` stored as (out, in)."""
    if x.ndim == 1:
        y = T.matmul(x.reshape(1, -1), T.transpose(w, (1, 0))).reshape(-1)
    else:
        y = T.matmul(x, T.transpose(w, (1, 0)))
    return y if b is None else y + b


def lstm_layer(xs: Tensor, h: Tensor, c: Tensor, w_ih: Tensor, w_hh: Tensor, b: Tensor) -> Tensor:
    """Run one LSTM layer over ``xs`` (B, T, in); returns hidden states (B, T, H).

    Gate layout along the 4H axis is input, forget, cell, output.
    """
    H = w_hh.shape[1]
    steps = xs.shape[1]
    pre = linear(xs, w_ih, b)
    w_hh_t = T.transpose(w_hh, (1, 0))
    hs = []
    for t in range(steps):
        gates = pre[:, t] + T.matmul(h, w_hh_t)
        sig = T.sigmoid(gates)
        i, f, o = sig[:, :H], sig[:, H:2 * H], sig[:, 3 * H:]
        g = T.tanh(gates[:, 2 * H:3 * H])
        c = f * c + i * g
        h = o * T.tanh(c)
        hs.append(h)
    return T.stack(hs, axis=1)


def lstm_params(rng: np.random.Generator, d_in: int, H: int, dtype) -> dict[str, Tensor]:
    """Uniform(+-1/sqrt(fan_in)) LSTM weights with the forget-gate bias shifted to +1."""
    b = uniform_init(rng, (4 * H,), H, dtype)
    b.data[H:2 * H] += 1.0
    return {
        "w_ih": uniform_init(rng, (4 * H, d_in), d_in, dtype),
        "w_hh": uniform_init(rng, (4 * H, H), H, dtype),
        "b": b,
    }

"""The painter: latent vector -> image as a sequence of rank-1 learning-rule updates."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .config import FpaConfig, InputGen, RuleKind
from .layers import Model, linear, lstm_layer, lstm_params, uniform_init
from .rules import RuleStep, rule_update
from .tensor import DimensionError, Tensor


@dataclass
class PaintTrace:
    """Per-step record of one generation.

    Arrays are indexed by step first: ``keys`` (T, c, d_key), ``values``
    (T, c, d_value), ``lrs`` (T, c), ``updates`` and ``cumulative`` (T, c,
    d_value, d_key). A batched generation adds a batch axis after the step
    axis. ``cumulative[-1]`` is the pre-tanh output.
    """

    keys: np.ndarray
    values: np.ndarray
    lrs: np.ndarray
    updates: np.ndarray
    cumulative: np.ndarray

    def __len__(self) -> int:
        return self.updates.shape[0]

    @property
    def final(self) -> np.ndarray:
        return self.cumulative[-1]

    def select(self, i: int) -> "PaintTrace":
        """Trace of batch element ``i`` from a batched trace."""
        return PaintTrace(*(a[:, i] for a in (self.keys, self.values, self.lrs, self.updates, self.cumulative)))


@dataclass
class TraceEntry:
    key: np.ndarray
    value: np.ndarray
    lr: np.ndarray
    update: np.ndarray


def param_shapes(cfg: FpaConfig) -> dict[str, tuple[int, ...]]:
    """Shapes of every painter parameter, keyed by name."""
    shapes: dict[str, tuple[int, ...]] = {}
    if cfg.input_gen is InputGen.V2:
        shapes["input_gen.w"] = (cfg.T * cfg.d_in, cfg.d_latent)
        shapes["input_gen.b"] = (cfg.T * cfg.d_in,)
        if cfg.d_in_prime:
            shapes["input_proj.w"] = (cfg.d_in_prime, cfg.d_in)
            shapes["input_proj.b"] = (cfg.d_in_prime,)
    H = cfg.d_hidden
    d = cfg.rnn_input_dim
    for layer in range(cfg.num_rnn_layers):
        shapes[f"lstm{layer}.w_ih"] = (4 * H, d)
        shapes[f"lstm{layer}.w_hh"] = (4 * H, H)
        shapes[f"lstm{layer}.b"] = (4 * H,)
        if cfg.latent_to_init:
            shapes[f"init{layer}.w"] = (2 * H, cfg.d_latent)
            shapes[f"init{layer}.b"] = (2 * H,)
        d = H
    shapes["w_slow"] = (cfg.c * (cfg.d_key + cfg.d_value + 1), H)
    return shapes


def count_parameters(cfg: FpaConfig) -> int:
    return int(sum(np.prod(s) for s in param_shapes(cfg).values()))


class Painter(Model):
    """Fast weight painter generator.

    ``generate`` accepts a latent of shape (d_latent,) or (B, d_latent).
    """

    def __init__(self, cfg: FpaConfig, seed: int = 0, dtype=np.float32,
                 rng: np.random.Generator | None = None) -> None:
        self.cfg = cfg
        self.dtype = np.dtype(dtype)
        rng = rng if rng is not None else np.random.default_rng(seed)
        p: dict[str, Tensor] = {}
        if cfg.input_gen is InputGen.V2:
            p["input_gen.w"] = uniform_init(rng, (cfg.T * cfg.d_in, cfg.d_latent), cfg.d_latent, dtype)
            p["input_gen.b"] = uniform_init(rng, (cfg.T * cfg.d_in,), cfg.d_latent, dtype)
            if cfg.d_in_prime:
                p["input_proj.w"] = uniform_init(rng, (cfg.d_in_prime, cfg.d_in), cfg.d_in, dtype)
                p["input_proj.b"] = uniform_init(rng, (cfg.d_in_prime,), cfg.d_in, dtype)
        d = cfg.rnn_input_dim
        for layer in range(cfg.num_rnn_layers):
            for k, v in lstm_params(rng, d, cfg.d_hidden, dtype).items():
                p[f"lstm{layer}.{k}"] = v
            if cfg.latent_to_init:
                p[f"init{layer}.w"] = uniform_init(rng, (2 * cfg.d_hidden, cfg.d_latent), cfg.d_latent, dtype)
                p[f"init{layer}.b"] = uniform_init(rng, (2 * cfg.d_hidden,), cfg.d_latent, dtype)
            d = cfg.d_hidden
        p["w_slow"] = uniform_init(rng, (cfg.c * (cfg.d_key + cfg.d_value + 1), cfg.d_hidden), cfg.d_hidden, dtype)
        self.params = p

    # ------------------------------------------------------------------
    def _as_latent(self, z) -> tuple[Tensor, bool]:
        z = z if isinstance(z, Tensor) else Tensor(np.asarray(z, dtype=self.dtype))
        single = z.ndim == 1
        if single:
            z = z.reshape(1, -1)
        if z.shape[-1] != self.cfg.d_latent:
            raise DimensionError(f"latent has size {z.shape[-1]}, painter expects d_latent={self.cfg.d_latent}")
        return z, single

    def input_generate(self, z, steps: int | None = None) -> Tensor:
        """Latent (B, d_latent) -> LSTM input sequence (B, T, d)."""
        cfg = self.cfg
        z, single = self._as_latent(z)
        B = z.shape[0]
        if cfg.input_gen is InputGen.V1:
            n = steps or cfg.T
            xs = T.stack([z] * n, axis=1)
        else:
            if steps is not None and steps != cfg.T:
                raise ValueError("input generator v2 is tied to the configured step count")
            flat = linear(z, self.params["input_gen.w"], self.params["input_gen.b"])
            if cfg.input_gen_tanh:
                flat = T.tanh(flat)
            xs = flat.reshape(B, cfg.T, cfg.d_in)
            if cfg.d_in_prime:
                xs = linear(xs, self.params["input_proj.w"], self.params["input_proj.b"])
        return xs.reshape(xs.shape[1:]) if single else xs

    def sequence_process(self, inputs: Tensor, z) -> Tensor:
        """Stacked LSTM over (B, T, d) inputs; returns hidden states (B, T, d_hidden)."""
        cfg = self.cfg
        z, single = self._as_latent(z)
        xs = inputs.reshape((1,) + inputs.shape) if inputs.ndim == 2 else inputs
        B, H = xs.shape[0], cfg.d_hidden
        for layer in range(cfg.num_rnn_layers):
            if cfg.latent_to_init:
                init = linear(z, self.params[f"init{layer}.w"], self.params[f"init{layer}.b"])
                h0, c0 = init[:, :H], init[:, H:]
            else:
                h0 = c0 = Tensor(np.zeros((B, H), dtype=self.dtype))
            xs = lstm_layer(xs, h0, c0, self.params[f"lstm{layer}.w_ih"],
                            self.params[f"lstm{layer}.w_hh"], self.params[f"lstm{layer}.b"])
        return xs.reshape(xs.shape[1:]) if single else xs

    def project(self, h: Tensor) -> RuleStep:
        """Hidden state(s) (..., d_hidden) -> per-channel normalised key, value, learning rate."""
        cfg = self.cfg
        proj = linear(h, self.params["w_slow"])
        lead = proj.shape[:-1]
        k, v, beta = T.split(proj, [cfg.c * cfg.d_key, cfg.c * cfg.d_value, cfg.c], axis=-1)
        k_hat = T.softmax(k.reshape(lead + (cfg.c, cfg.d_key)))
        v = v.reshape(lead + (cfg.c, cfg.d_value))
        lr = T.sigmoid(beta)
        if cfg.lr_clamp > 0:
            lr = T.clamp_st(lr, cfg.lr_clamp, 1.0 - cfg.lr_clamp)
        return RuleStep(k_hat, v, lr)

    def _update(self, W: Tensor, step: RuleStep) -> Tensor:
        return rule_update(self.cfg.rule, W, step, additive_unit_lr=self.cfg.additive_unit_lr)

    def paint_step(self, W_prev: Tensor, h_t: Tensor) -> tuple[Tensor, TraceEntry]:
        """One painting step on image(s) (..., c, d_value, d_key) from hidden state(s) (..., d_hidden)."""
        cfg = self.cfg
        expected = h_t.shape[:-1] + (cfg.c, cfg.d_value, cfg.d_key)
        if W_prev.shape != expected:
            raise DimensionError(f"paint_step: image shape {W_prev.shape} != expected {expected}")
        step = self.project(h_t)
        upd = self._update(W_prev, step)
        entry = TraceEntry(step.key_normalized.data, step.value.data, step.lr.data, upd.data)
        return W_prev + upd, entry

    def paint(self, hs: Tensor, record_trace: bool = False) -> tuple[Tensor, PaintTrace | None]:
        """Apply every painting step for hidden states (B, T, d_hidden); returns pre-tanh W_T."""
        cfg = self.cfg
        B, steps = hs.shape[:2]
        steps_all = self.project(hs)  # one projection for all steps
        W = Tensor(np.zeros((B, cfg.c, cfg.d_value, cfg.d_key), dtype=self.dtype))
        rec: list[list[np.ndarray]] = [[], [], [], [], []]
        for t in range(steps):
            step = RuleStep(steps_all.key_normalized[:, t], steps_all.value[:, t], steps_all.lr[:, t])
            upd = self._update(W, step)
            W = W + upd
            if record_trace:
                for lst, arr in zip(rec, (step.key_normalized.data, step.value.data, step.lr.data,
                                          upd.data, W.data)):
                    lst.append(np.array(arr, copy=True))
        trace = PaintTrace(*(np.stack(r) for r in rec)) if record_trace else None
        return W, trace

    def generate(self, z, record_trace: bool = False, steps: int | None = None,
                 pre_tanh: bool = False) -> tuple[Tensor, PaintTrace | None]:
        """Latent(s) -> image(s) (…, c, d_value, d_key), optionally with the paint trace."""
        zt, single = self._as_latent(z)
        xs = self.input_generate(zt, steps=steps)
        hs = self.sequence_process(xs, zt)
        W, trace = self.paint(hs, record_trace)
        img = T.tanh(W) if self.cfg.output_tanh and not pre_tanh else W
        if single:
            img = img.reshape(img.shape[1:])
            if trace is not None:
                trace = trace.select(0)
        return img, trace

    def sample(self, n: int, rng: np.random.Generator, batch_size: int = 256) -> np.ndarray:
        """Generate ``n`` images from unit-Gaussian latents without recording gradients."""
        out = []
        for start in range(0, n, batch_size):
            m = min(batch_size, n - start)
            z = rng.standard_normal((m, self.cfg.d_latent)).astype(self.dtype)
            out.append(self.generate(z)[0].data)
        return np.concatenate(out, axis=0)

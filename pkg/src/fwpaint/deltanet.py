"""DeltaNet sequence layers and a synthetic few-shot classification harness.

A layer projects each input to per-head query/key/value/learning-rate,
writes into a per-head fast weight matrix with the delta rule (starting
from zero at the beginning of every sequence) and reads it out with the
query.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .layers import Model, linear, uniform_init
from .optim import AdamState, adam_step
from .rules import RuleStep, apply_delta
from .tensor import DimensionError, Tape, Tensor, backward


@dataclass
class FastWeightRecord:
    """Per-step fast weights of one layer: ``updates`` and ``weights`` are (steps, B, heads, d_out, d_key)."""

    updates: list = field(default_factory=list)
    weights: list = field(default_factory=list)

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        return np.stack(self.updates), np.stack(self.weights)


def fast_weight_step(W: Tensor, q_hat: Tensor, step: RuleStep) -> tuple[Tensor, Tensor, Tensor]:
    """Delta-rule write of ``step`` into ``W`` followed by the read-out ``W' q_hat``.

    Returns ``(y, W', update)``.
    """
    W_new = apply_delta(W, step)
    y = T.matmul(W_new, q_hat.reshape(q_hat.shape + (1,))).reshape(W_new.shape[:-1])
    return y, W_new, W_new - W


class DeltaNetLayer(Model):
    """One multi-head DeltaNet layer with input ``d_in`` and ``heads * d_out`` outputs."""

    def __init__(self, d_in: int, heads: int, d_key: int, d_out: int, rng: np.random.Generator,
                 dtype=np.float32) -> None:
        self.d_in, self.heads, self.d_key, self.d_out = d_in, heads, d_key, d_out
        self.params = {"w_slow": uniform_init(rng, (heads * (2 * d_key + d_out + 1), d_in), d_in, dtype)}

    def project(self, x: Tensor) -> tuple[Tensor, RuleStep]:
        """(..., d_in) -> normalised query and a rule step, each with a heads axis."""
        H, dk, dv = self.heads, self.d_key, self.d_out
        proj = linear(x, self.params["w_slow"])
        lead = proj.shape[:-1]
        q, k, v, beta = T.split(proj, [H * dk, H * dk, H * dv, H], axis=-1)
        q_hat = T.softmax(q.reshape(lead + (H, dk)))
        k_hat = T.softmax(k.reshape(lead + (H, dk)))
        return q_hat, RuleStep(k_hat, v.reshape(lead + (H, dv)), T.sigmoid(beta))

    def initial_state(self, batch: int, dtype=np.float32) -> Tensor:
        return Tensor(np.zeros((batch, self.heads, self.d_out, self.d_key), dtype=dtype))

    def step(self, x_t: Tensor, W: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        """One time step on (B, d_in) input: returns (y (B, heads * d_out), W', update)."""
        if x_t.shape[-1] != self.d_in:
            raise DimensionError(f"DeltaNet layer expects inputs of size {self.d_in}, got {x_t.shape}")
        q_hat, st = self.project(x_t)
        y, W, upd = fast_weight_step(W, q_hat, st)
        return y.reshape(y.shape[:-2] + (-1,)), W, upd

    def forward(self, xs: Tensor, record: FastWeightRecord | None = None) -> Tensor:
        """Sequence (B, S, d_in) -> outputs (B, S, heads * d_out); fast weights start at zero."""
        B, S = xs.shape[:2]
        q_all, st_all = self.project(xs)
        W = self.initial_state(B, xs.dtype)
        ys = []
        for t in range(S):
            st = RuleStep(st_all.key_normalized[:, t], st_all.value[:, t], st_all.lr[:, t])
            y, W, upd = fast_weight_step(W, q_all[:, t], st)
            ys.append(y.reshape((B, -1)))
            if record is not None:
                record.updates.append(upd.data.copy())
                record.weights.append(W.data.copy())
        return T.stack(ys, axis=1)


def deltanet_step(layer: DeltaNetLayer, x_t: Tensor, state: Tensor) -> tuple[Tensor, Tensor]:
    y, W, _ = layer.step(x_t, state)
    return y, W


def _layer_norm(x: Tensor, eps: float = 1e-5) -> Tensor:
    mu = T.mean(x, axis=-1, keepdims=True)
    xc = x - mu
    var = T.mean(xc * xc, axis=-1, keepdims=True)
    return xc * T.power(var + eps, -0.5)


class FewShotDeltaNet(Model):
    """Embedding, residual DeltaNet layers and a linear classifier on the last step."""

    def __init__(self, d_in: int, ways: int, d_model: int = 64, layers: int = 2, heads: int = 4,
                 d_key: int = 16, d_out: int = 16, seed: int = 0, dtype=np.float32) -> None:
        rng = np.random.default_rng(seed)
        self.d_in, self.ways = d_in, ways
        p = {
            "embed.w": uniform_init(rng, (d_model, d_in), d_in, dtype),
            "embed.b": uniform_init(rng, (d_model,), d_in, dtype),
        }
        self.layers = []
        for i in range(layers):
            layer = DeltaNetLayer(d_model, heads, d_key, d_out, rng, dtype)
            self.layers.append(layer)
            p[f"layer{i}.w_slow"] = layer.params["w_slow"]
            p[f"layer{i}.out.w"] = uniform_init(rng, (d_model, heads * d_out), heads * d_out, dtype)
        p["cls.w"] = uniform_init(rng, (ways, d_model), d_model, dtype)
        p["cls.b"] = uniform_init(rng, (ways,), d_model, dtype)
        self.params = p

    def logits(self, xs, records: list | None = None) -> Tensor:
        xs = xs if isinstance(xs, Tensor) else Tensor(xs)
        if xs.ndim != 3 or xs.shape[-1] != self.d_in:
            raise DimensionError(f"episodes must be (B, steps, {self.d_in}), got {xs.shape}")
        h = linear(xs, self.params["embed.w"], self.params["embed.b"])
        for i, layer in enumerate(self.layers):
            rec = FastWeightRecord() if records is not None else None
            y = layer.forward(_layer_norm(h), rec)
            h = h + linear(y, self.params[f"layer{i}.out.w"])
            if records is not None:
                records.append(rec)
        return linear(h[:, -1], self.params["cls.w"], self.params["cls.b"])


def cross_entropy(logits: Tensor, targets: np.ndarray) -> Tensor:
    logp = T.log_softmax(logits, axis=-1)
    onehot = np.zeros(logits.shape, dtype=logits.dtype)
    onehot[np.arange(len(targets)), targets] = 1.0
    return -T.mean(T.sum(logp * Tensor(onehot), axis=-1))


# ---------------------------------------------------------------------------
# synthetic episodes
# ---------------------------------------------------------------------------

@dataclass
class Episodes:
    inputs: np.ndarray   # (B, ways*shots + 1, pixels + ways)
    targets: np.ndarray  # (B,) class of the final, unlabelled item
    images: np.ndarray   # (B, ways*shots + 1, side, side)
    labels: np.ndarray   # (B, ways*shots + 1), -1 for the query


def make_episodes(rng: np.random.Generator, batch: int, ways: int, shots: int, side: int = 8,
                  noise: float = 0.3, dtype=np.float32) -> Episodes:
    """Episodes of noisy copies of per-episode random +-1 prototypes.

    The labelled support items are shuffled; the one-hot label is appended
    to each flattened image, and the final query item carries a zero label.
    """
    if ways < 1 or shots < 1:
        raise ValueError("episodes need ways >= 1 and shots >= 1")
    pix = side * side
    protos = rng.choice([-1.0, 1.0], size=(batch, ways, pix))
    labels = np.tile(np.repeat(np.arange(ways), shots), (batch, 1))
    labels = rng.permuted(labels, axis=1)
    targets = rng.integers(0, ways, size=batch)
    labels = np.concatenate([labels, -np.ones((batch, 1), dtype=labels.dtype)], axis=1)
    cls = labels.copy()
    cls[:, -1] = targets
    imgs = np.take_along_axis(protos, cls[:, :, None], axis=1) + noise * rng.standard_normal((batch, cls.shape[1], pix))
    onehot = np.zeros((batch, cls.shape[1], ways))
    b_idx, s_idx = np.nonzero(labels >= 0)
    onehot[b_idx, s_idx, labels[b_idx, s_idx]] = 1.0
    inputs = np.concatenate([imgs, onehot], axis=-1).astype(dtype)
    return Episodes(inputs, targets, imgs.reshape(batch, -1, side, side).astype(dtype), labels)


def fewshot_episode(net: FewShotDeltaNet, episode_inputs: np.ndarray) -> np.ndarray:
    """Class logits for the final (unlabelled) item of each episode."""
    inputs = np.asarray(episode_inputs)
    if inputs.ndim == 2:
        inputs = inputs[None]
    if inputs.ndim != 3 or inputs.shape[1] < 2 or inputs.shape[-1] != net.d_in:
        raise DimensionError(f"malformed episode batch of shape {inputs.shape}")
    return net.logits(inputs).data


def accuracy(net: FewShotDeltaNet, rng: np.random.Generator, n: int, ways: int, shots: int,
             noise: float = 0.3, batch: int = 250) -> float:
    correct = 0
    done = 0
    while done < n:
        m = min(batch, n - done)
        ep = make_episodes(rng, m, ways, shots, noise=noise)
        correct += int((fewshot_episode(net, ep.inputs).argmax(-1) == ep.targets).sum())
        done += m
    return correct / n


@dataclass
class FewShotResult:
    net: FewShotDeltaNet
    episodes_seen: int
    accuracy: float
    history: list


def train_fewshot(ways: int = 5, shots: int = 5, episodes: int = 20000, batch: int = 8, seed: int = 0,
                  lr: float = 2e-3, noise: float = 0.3, eval_every: int = 2000, eval_n: int = 1000,
                  target: float | None = None, cosine: bool = True, **net_kwargs) -> FewShotResult:
    """Train on fresh synthetic episodes; stops early once ``target`` accuracy is reached.

    With ``cosine`` the learning rate follows a half cosine from ``lr`` down
    to ``lr / 20`` over the episode budget.
    """
    rng = np.random.default_rng(seed)
    net = FewShotDeltaNet(64 + ways, ways, seed=seed, **net_kwargs)
    state = AdamState()
    eval_rng_seed = seed + 10_000
    seen, history, acc = 0, [], 0.0
    while seen < episodes:
        ep = make_episodes(rng, min(batch, episodes - seen), ways, shots, noise=noise)
        with Tape():
            loss = cross_entropy(net.logits(ep.inputs), ep.targets)
        backward(loss)
        step_lr = lr * (0.05 + 0.475 * (1 + np.cos(np.pi * seen / episodes))) if cosine else lr
        adam_step(net.params, None, state, step_lr, beta1=0.9, beta2=0.999)
        net.zero_grad()
        prev = seen
        seen += len(ep.targets)
        if seen // eval_every != prev // eval_every or seen >= episodes:
            acc = accuracy(net, np.random.default_rng(eval_rng_seed), eval_n, ways, shots, noise)
            history.append({"episodes": seen, "loss": float(loss.data), "accuracy": acc})
            if target is not None and acc >= target:
                break
    return FewShotResult(net, seen, acc, history)

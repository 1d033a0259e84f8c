"""The finite-difference gradient suite, grouped by component.

Everything runs in float64. Primitive ops are held to 1e-5 relative
error, composed models to 1e-4.
"""
from __future__ import annotations

from typing import Callable

import numpy as np

from . import tensor as T
from .adversary import Discriminator, hinge_d_loss, hinge_g_loss, recon_loss
from .config import FpaConfig, InputGen, RuleKind
from .gradcheck import GradCheckResult, check_gradients
from .layers import linear, lstm_layer
from .painter import Painter
from .rules import RuleStep, additive_update, delta_update, oja_update
from .tensor import Tensor
from .unet import UNet

OP_TOL = 1e-5
COMPOSITE_TOL = 1e-4
# Leaky-ReLU networks are piecewise linear; a short step keeps probes from
# straddling a kink, and float64 rounding stays far below the tolerance.
KINK_EPS = 1e-6
GROUPS = ("ops", "rules", "painter", "adversary", "unet")


def _t(rng, *shape, lo=None, hi=None) -> Tensor:
    data = rng.standard_normal(shape) if lo is None else rng.uniform(lo, hi, size=shape)
    return Tensor(data, requires_grad=True)


def _weighted(out: Tensor, w: np.ndarray) -> Tensor:
    return T.sum(out * Tensor(w))


def _op_case(name: str, fn: Callable[..., Tensor], inputs: list[Tensor], rng) -> GradCheckResult:
    probe = fn(*inputs)
    w = rng.standard_normal(probe.shape)
    return check_gradients(lambda: _weighted(fn(*inputs), w), inputs, tolerance=OP_TOL, name=f"ops.{name}")


def op_suite(seed: int = 0) -> list[GradCheckResult]:
    rng = np.random.default_rng(seed)
    away = lambda *s: Tensor(rng.choice([-1.0, 1.0], size=s) * rng.uniform(0.2, 2.0, size=s), requires_grad=True)  # noqa: E731
    cases = [
        ("add", T.add, [_t(rng, 3, 4), _t(rng, 4)]),
        ("sub", T.sub, [_t(rng, 3, 4), _t(rng, 3, 1)]),
        ("mul", T.mul, [_t(rng, 3, 4), _t(rng, 3, 4)]),
        ("div", T.div, [_t(rng, 3, 4), _t(rng, 3, 4, lo=0.5, hi=2.0)]),
        ("neg", T.neg, [_t(rng, 5)]),
        ("scale", lambda x: T.scale(x, 2.5), [_t(rng, 5)]),
        ("sigmoid", T.sigmoid, [_t(rng, 3, 4)]),
        ("tanh", T.tanh, [_t(rng, 3, 4)]),
        ("relu", T.relu, [away(3, 4)]),
        ("leaky_relu", T.leaky_relu, [away(3, 4)]),
        ("exp", T.exp, [_t(rng, 3, 4)]),
        ("log", T.log, [_t(rng, 3, 4, lo=0.5, hi=3.0)]),
        ("absolute", T.absolute, [away(3, 4)]),
        ("power", lambda x: T.power(x, 1.5), [_t(rng, 3, 4, lo=0.5, hi=3.0)]),
        ("clamp_st", lambda x: T.clamp_st(x, -5.0, 5.0), [_t(rng, 6)]),
        ("softmax", lambda x: T.softmax(x, axis=-1), [_t(rng, 3, 5)]),
        ("log_softmax", lambda x: T.log_softmax(x, axis=0), [_t(rng, 4, 3)]),
        ("sum", lambda x: T.sum(x, axis=1, keepdims=True), [_t(rng, 3, 4)]),
        ("mean", lambda x: T.mean(x, axis=0), [_t(rng, 3, 4)]),
        ("reshape", lambda x: T.reshape(x, (2, 6)), [_t(rng, 3, 4)]),
        ("transpose", lambda x: T.transpose(x, (2, 0, 1)), [_t(rng, 2, 3, 4)]),
        ("getitem", lambda x: x[1:, ::2], [_t(rng, 3, 4)]),
        ("concat", lambda a, b: T.concat([a, b], axis=1), [_t(rng, 2, 3), _t(rng, 2, 2)]),
        ("stack", lambda a, b: T.stack([a, b], axis=1), [_t(rng, 2, 3), _t(rng, 2, 3)]),
        ("split", lambda x: T.split(x, [2, 3], axis=-1)[1] * 2.0 + T.sum(T.split(x, [2, 3], axis=-1)[0]),
         [_t(rng, 3, 5)]),
        ("matmul", T.matmul, [_t(rng, 2, 3, 4), _t(rng, 2, 4, 5)]),
        ("outer", T.outer, [_t(rng, 3), _t(rng, 4)]),
        ("batch_outer", T.batch_outer, [_t(rng, 2, 3), _t(rng, 2, 4)]),
        ("conv2d", lambda x, w, b: T.conv2d(x, w, b, stride=2, padding=1),
         [_t(rng, 2, 3, 6, 6), _t(rng, 4, 3, 4, 4), _t(rng, 4)]),
        ("conv_transpose2d", lambda x, w, b: T.conv_transpose2d(x, w, b, stride=2, padding=1),
         [_t(rng, 2, 3, 3, 3), _t(rng, 3, 2, 4, 4), _t(rng, 2)]),
        ("box_downsample", lambda x: T.box_downsample(x, 2), [_t(rng, 2, 2, 4, 4)]),
        ("linear", linear, [_t(rng, 3, 4), _t(rng, 5, 4), _t(rng, 5)]),
        ("lstm_layer", lstm_layer, [_t(rng, 2, 3, 4), _t(rng, 2, 5), _t(rng, 2, 5), _t(rng, 20, 4),
                                    _t(rng, 20, 5), _t(rng, 20)]),
    ]
    return [_op_case(name, fn, inputs, rng) for name, fn, inputs in cases]


def rule_suite(seed: int = 0) -> list[GradCheckResult]:
    rng = np.random.default_rng(seed)
    out = []
    for name, fn in (("delta", delta_update), ("additive", additive_update), ("oja", oja_update)):
        W, k, v, lr = _t(rng, 2, 3, 4), _t(rng, 2, 4), _t(rng, 2, 3), _t(rng, 2, lo=0.1, hi=0.9)
        w = rng.standard_normal((2, 3, 4))

        def loss(fn=fn, W=W, k=k, v=v, lr=lr, w=w):
            return _weighted(fn(W, RuleStep(T.softmax(k), v, lr)), w)

        out.append(check_gradients(loss, [W, k, v, lr], tolerance=OP_TOL, name=f"rules.{name}"))
    return out


def composite_config(T_steps: int = 4, res: int = 8, channels: int = 1, rule: RuleKind = RuleKind.DELTA) -> FpaConfig:
    return FpaConfig(T=T_steps, c=channels, d_key=res, d_value=res, d_latent=6, d_in=3, d_in_prime=5,
                     d_hidden=6, num_rnn_layers=1, input_gen=InputGen.V2, rule=rule)


def painter_suite(seed: int = 0, max_entries: int | None = None) -> list[GradCheckResult]:
    rng = np.random.default_rng(seed)
    out = []
    for rule in RuleKind:
        painter = Painter(composite_config(rule=rule), seed=seed, dtype=np.float64)
        z = rng.standard_normal((2, painter.cfg.d_latent))
        w = rng.standard_normal((2, 1, 8, 8))
        out.append(check_gradients(lambda: _weighted(painter.generate(z)[0], w), painter.parameters(),
                                   tolerance=COMPOSITE_TOL, max_entries=max_entries, rng=rng,
                                   name=f"painter.{rule.value}"))
    return out


def adversary_suite(seed: int = 0, max_entries: int | None = 40) -> list[GradCheckResult]:
    rng = np.random.default_rng(seed)
    disc = Discriminator(1, 16, widths=(4, 6), dec_width=3, seed=seed, dtype=np.float64)
    real = Tensor(np.tanh(rng.standard_normal((2, 1, 16, 16))))
    fake = Tensor(np.tanh(rng.standard_normal((2, 1, 16, 16))), requires_grad=True)

    def d_loss():
        s_real, r8, r16 = disc(real)
        s_fake, _, _ = disc(fake, with_recon=False)
        return hinge_d_loss(s_real * 0.1, s_fake * 0.1) + recon_loss(r8, r16, real)

    def g_loss():
        return hinge_g_loss(disc(fake, with_recon=False)[0])

    return [
        check_gradients(d_loss, disc.parameters(), eps=KINK_EPS, tolerance=COMPOSITE_TOL,
                        max_entries=max_entries, rng=rng, name="adversary.d_loss"),
        check_gradients(g_loss, [fake], eps=KINK_EPS, tolerance=COMPOSITE_TOL, name="adversary.g_loss_input"),
    ]


def unet_suite(seed: int = 0, max_entries: int | None = 30) -> list[GradCheckResult]:
    rng = np.random.default_rng(seed)
    unet = UNet(1, widths=(3, 4, 5), seed=seed, dtype=np.float64)
    x = Tensor(np.tanh(rng.standard_normal((2, 1, 8, 8))), requires_grad=True)
    w = rng.standard_normal((2, 1, 8, 8))
    return [check_gradients(lambda: _weighted(unet.refine(x), w), unet.parameters() + [x],
                            eps=KINK_EPS, tolerance=COMPOSITE_TOL, max_entries=max_entries, rng=rng, name="unet.refine")]


_SUITES = {"ops": op_suite, "rules": rule_suite, "painter": painter_suite,
           "adversary": adversary_suite, "unet": unet_suite}


def run_suite(module: str = "all", seed: int = 0) -> list[GradCheckResult]:
    """Run one group (or ``"all"``) and return every result."""
    if module == "all":
        return [r for name in GROUPS for r in _SUITES[name](seed)]
    if module not in _SUITES:
        raise ValueError(f"unknown gradcheck group {module!r}; expected 'all' or one of {list(GROUPS)}")
    return _SUITES[module](seed)

"""Outer-product update rules for a fast weight matrix (or an image channel).

All rules take the already-normalised key ``k`` (softmax applied by the
caller) and broadcast over leading batch axes: ``W`` is ``(..., d_value,
d_key)``, ``k`` is ``(..., d_key)``, ``v`` is ``(..., d_value)`` and ``lr`` is
``(...)``.
"""
from __future__ import annotations

from dataclasses import dataclass

from . import tensor as T
from .config import RuleKind
from .tensor import DimensionError, Tensor


@dataclass
class RuleStep:
    key_normalized: Tensor
    value: Tensor
    lr: Tensor


def _check(W: Tensor, step: RuleStep) -> None:
    k, v, lr = step.key_normalized, step.value, step.lr
    if W.ndim < 2:
        raise DimensionError(f"weight matrix must be at least 2-D, got shape {W.shape}")
    lead = W.shape[:-2]
    dv, dk = W.shape[-2:]
    if k.shape != lead + (dk,) or v.shape != lead + (dv,) or lr.shape != lead:
        raise DimensionError(
            f"rule step shapes key={k.shape}, value={v.shape}, lr={lr.shape} "
            f"do not match weight shape {W.shape}")


def _matvec(W: Tensor, x: Tensor) -> Tensor:
    return T.matmul(W, x.reshape(x.shape + (1,))).reshape(W.shape[:-1])


def _gate(lr: Tensor) -> Tensor:
    return lr.reshape(lr.shape + (1,))


def delta_update(W: Tensor, step: RuleStep) -> Tensor:
    """Increment ``lr * (v - W k) (x) k``: write ``v`` at key ``k``, correcting what is stored there."""
    _check(W, step)
    k = step.key_normalized
    err = (step.value - _matvec(W, k)) * _gate(step.lr)
    return T.batch_outer(err, k)


def additive_update(W: Tensor, step: RuleStep, unit_lr: bool = False) -> Tensor:
    """Increment ``lr * v (x) k``; ``unit_lr`` drops the gate (plain linear-attention write)."""
    _check(W, step)
    v = step.value if unit_lr else step.value * _gate(step.lr)
    return T.batch_outer(v, step.key_normalized)


def oja_update(W: Tensor, step: RuleStep) -> Tensor:
    """Increment ``lr * v (x) (k - W^T v)``."""
    _check(W, step)
    v = step.value
    back = _matvec(T.transpose(W, tuple(range(W.ndim - 2)) + (W.ndim - 1, W.ndim - 2)), v)
    return T.batch_outer(v * _gate(step.lr), step.key_normalized - back)


def rule_update(kind: RuleKind, W: Tensor, step: RuleStep, additive_unit_lr: bool = False) -> Tensor:
    """The rank-1 increment the rule ``kind`` adds to ``W``."""
    if kind is RuleKind.DELTA:
        return delta_update(W, step)
    if kind is RuleKind.ADDITIVE:
        return additive_update(W, step, unit_lr=additive_unit_lr)
    if kind is RuleKind.OJA:
        return oja_update(W, step)
    raise ValueError(f"unknown rule {kind!r}")


def apply_delta(W: Tensor, step: RuleStep) -> Tensor:
    """``W + delta_update(W, step)``, evaluated as ``(W - lr (W k) (x) k) + lr v (x) k``.

    This ordering erases the old association before writing the new one, so
    with a one-hot key and ``lr = 1`` the stored column becomes exactly ``v``.
    """
    _check(W, step)
    k, gate = step.key_normalized, _gate(step.lr)
    erased = W - T.batch_outer(_matvec(W, k) * gate, k)
    return erased + T.batch_outer(step.value * gate, k)


def apply_additive(W: Tensor, step: RuleStep, unit_lr: bool = False) -> Tensor:
    return W + additive_update(W, step, unit_lr)


def apply_oja(W: Tensor, step: RuleStep) -> Tensor:
    return W + oja_update(W, step)


def apply_rule(kind: RuleKind, W: Tensor, step: RuleStep, additive_unit_lr: bool = False) -> Tensor:
    return W + rule_update(kind, W, step, additive_unit_lr)

"""Configuration records, JSON (de)serialisation and the shipped presets."""
from __future__ import annotations

import dataclasses
import enum
import json
from dataclasses import dataclass, field
from importlib import resources
from typing import Any


class ConfigError(ValueError):
    """Malformed or inconsistent configuration."""


class RuleKind(str, enum.Enum):
    DELTA = "delta"
    ADDITIVE = "additive"
    OJA = "oja"

    @classmethod
    def parse(cls, value: "str | RuleKind") -> "RuleKind":
        try:
            return cls(value)
        except ValueError:
            raise ConfigError(f"unknown learning rule {value!r}; expected one of "
                              f"{[r.value for r in cls]}") from None


class InputGen(str, enum.Enum):
    V1 = "v1"
    V2 = "v2"


@dataclass
class FpaConfig:
    """Architecture of a fast weight painter.

    ``d_key`` is the image width and ``d_value`` the image height.
    ``d_in_prime`` = 0 disables the extra linear layer between a v2 input
    generator and the LSTM.
    """

    T: int = 16
    c: int = 3
    d_key: int = 16
    d_value: int = 16
    d_latent: int = 32
    d_in: int = 8
    d_in_prime: int = 32
    d_hidden: int = 64
    num_rnn_layers: int = 1
    input_gen: InputGen = InputGen.V2
    input_gen_tanh: bool = False
    latent_to_init: bool = True
    output_tanh: bool = True
    rule: RuleKind = RuleKind.DELTA
    additive_unit_lr: bool = False
    lr_clamp: float = 1e-6

    def __post_init__(self) -> None:
        self.input_gen = InputGen(self.input_gen)
        self.rule = RuleKind.parse(self.rule)
        self.validate()

    def validate(self) -> None:
        for name in ("T", "c", "d_key", "d_value", "d_latent", "d_in", "d_hidden", "num_rnn_layers"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.d_in_prime < 0:
            raise ConfigError("d_in_prime must be >= 0")
        if self.input_gen is InputGen.V1 and self.d_in != self.d_latent:
            raise ConfigError(f"input generator v1 requires d_in == d_latent "
                              f"(got d_in={self.d_in}, d_latent={self.d_latent})")
        if not 0 <= self.lr_clamp < 0.5:
            raise ConfigError("lr_clamp must lie in [0, 0.5)")

    @property
    def rnn_input_dim(self) -> int:
        if self.input_gen is InputGen.V2 and self.d_in_prime:
            return self.d_in_prime
        return self.d_in

    @property
    def resolution(self) -> tuple[int, int]:
        return (self.d_value, self.d_key)


@dataclass
class TrainConfig:
    """Optimisation and evaluation settings for adversarial training.

    ``rule`` overrides the painter's rule when set. ``dataset`` is either
    ``{"synth": kind, "n": N}`` or ``{"folder": path}``.
    """

    batch_size: int = 20
    lr: float = 2e-4
    steps: int = 1000
    d_steps_per_g_step: int = 1
    seed: int = 0
    eval_every: int = 5000
    eval_n: int = 2048
    rule: RuleKind | None = None
    dataset: dict = field(default_factory=lambda: {"synth": "blobs", "n": 4096})
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    recon_weight: float = 1.0
    disc_widths: list = field(default_factory=lambda: [32, 64, 128, 256])
    metric_seed: int = 0

    def __post_init__(self) -> None:
        if self.rule is not None:
            self.rule = RuleKind.parse(self.rule)
        self.disc_widths = [int(w) for w in self.disc_widths]
        self.validate()

    def validate(self) -> None:
        for name in ("batch_size", "d_steps_per_g_step", "eval_every", "eval_n"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.steps < 0:
            raise ConfigError("steps must be >= 0")
        if not self.lr > 0:
            raise ConfigError("lr must be positive")
        if not self.disc_widths:
            raise ConfigError("disc_widths must be non-empty")
        keys = set(self.dataset)
        if not (keys <= {"synth", "n", "seed"} and "synth" in keys) and keys != {"folder"}:
            raise ConfigError(f"dataset must be {{'synth': kind, 'n': N}} or {{'folder': path}}, got {self.dataset}")


def _to_jsonable(obj: Any) -> Any:
    if isinstance(obj, enum.Enum):
        return obj.value
    return obj


def config_to_dict(cfg) -> dict:
    return {f.name: _to_jsonable(getattr(cfg, f.name)) for f in dataclasses.fields(cfg)}


def config_from_dict(cls, data: dict):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {unknown}")
    try:
        return cls(**data)
    except TypeError as e:
        raise ConfigError(str(e)) from None


def render(cfg) -> str:
    return json.dumps(config_to_dict(cfg), sort_keys=True)


def parse(cls, text: str):
    return config_from_dict(cls, json.loads(text))


PRESET_NAMES = ("celeba", "metfaces", "afhq_cat", "afhq_dog", "afhq_wild", "lsun_church", "desk16")


def load_preset(name: str) -> FpaConfig:
    """Painter configuration of a named preset (64x64 dataset rows, or ``desk16``)."""
    if name not in PRESET_NAMES:
        raise ConfigError(f"unknown preset {name!r}; available: {list(PRESET_NAMES)}")
    text = resources.files("fwpaint").joinpath("presets").joinpath(f"{name}.json").read_text("utf-8")
    return parse(FpaConfig, text)


def load_run_config(text: str) -> tuple[FpaConfig, TrainConfig]:
    """Parse a run file ``{"fpa": {...} | "preset-name", "train": {...}}``."""
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"config is not valid JSON: {e}") from None
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    unknown = sorted(set(data) - {"fpa", "train"})
    if unknown:
        raise ConfigError(f"unknown top-level config keys: {unknown}")
    fpa = data.get("fpa", {})
    fpa_cfg = load_preset(fpa) if isinstance(fpa, str) else config_from_dict(FpaConfig, fpa)
    train_cfg = config_from_dict(TrainConfig, data.get("train", {}))
    return fpa_cfg, train_cfg

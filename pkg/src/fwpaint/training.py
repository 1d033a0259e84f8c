"""Alternating hinge-loss GAN training, evaluation and checkpointing."""
from __future__ import annotations

import dataclasses
import json
import logging
from pathlib import Path
from typing import Iterator

import numpy as np

from . import tensor as T
from .adversary import Discriminator, hinge_d_loss, hinge_g_loss, recon_loss
from .checkpoint import Checkpoint, CheckpointError
from .config import FpaConfig, TrainConfig, config_from_dict, config_to_dict
from .data import DatasetError, DatasetHandle, load_folder, synth_generate
from .metrics import rffd
from .optim import AdamState, adam_step
from .painter import Painter
from .tensor import NumericError, Tape, Tensor, backward, no_grad_arrays
from .unet import UNet

log = logging.getLogger(__name__)


class DivergenceError(NumericError):
    """A loss became non-finite; training was aborted."""


def build_dataset(train_cfg: TrainConfig, fpa_cfg: FpaConfig) -> DatasetHandle:
    spec = train_cfg.dataset
    res = fpa_cfg.d_key
    if fpa_cfg.d_key != fpa_cfg.d_value:
        raise DatasetError("training needs square images (d_key == d_value)")
    if "folder" in spec:
        ds = load_folder(spec["folder"], res, channels=fpa_cfg.c, seed=train_cfg.seed)
    else:
        ds = synth_generate(spec["synth"], int(spec.get("n", 4096)), res,
                            seed=int(spec.get("seed", 0)), channels=fpa_cfg.c)
        ds.seed = train_cfg.seed
    return ds


class DataCursor:
    """Resumable position in the per-epoch shuffled index stream of a dataset."""

    def __init__(self, ds: DatasetHandle, epoch: int = 0, pos: int = 0) -> None:
        self.ds, self.epoch, self.pos = ds, epoch, pos
        self._order = ds.epoch_order(epoch)

    def next_batch(self, n: int) -> np.ndarray:
        idx = []
        while len(idx) < n:
            if self.pos == len(self._order):
                self.epoch += 1
                self.pos = 0
                self._order = self.ds.epoch_order(self.epoch)
            take = min(n - len(idx), len(self._order) - self.pos)
            idx.extend(self._order[self.pos:self.pos + take])
            self.pos += take
        return self.ds.images[idx]


class GanTrainer:
    """Trains a painter (``mode="fpa"``) or a U-Net on a frozen painter (``mode="refine"``).

    ``mode="joint"`` trains painter and U-Net together from scratch. It is
    kept only to reproduce that this setup does not learn a useful painter.

    All randomness derives from ``train_cfg.seed``; with a single worker two
    trainers built from the same inputs produce bit-identical trajectories.
    """

    def __init__(self, fpa_cfg: FpaConfig, train_cfg: TrainConfig, dataset: DatasetHandle | None = None,
                 out_dir=None, mode: str = "fpa", painter: Painter | None = None,
                 unet_widths=(16, 32, 64), dtype=np.float32) -> None:
        if train_cfg.rule is not None and train_cfg.rule is not fpa_cfg.rule:
            fpa_cfg = dataclasses.replace(fpa_cfg, rule=train_cfg.rule)
        if mode not in ("fpa", "refine", "joint"):
            raise ValueError(f"unknown training mode {mode!r}")
        self.fpa_cfg, self.cfg, self.mode = fpa_cfg, train_cfg, mode
        self.dataset = dataset if dataset is not None else build_dataset(train_cfg, fpa_cfg)
        if self.dataset.channels != fpa_cfg.c or self.dataset.resolution != fpa_cfg.d_key:
            raise DatasetError(
                f"dataset images are {self.dataset.channels}x{self.dataset.resolution}^2 but the painter "
                f"produces {fpa_cfg.c}x{fpa_cfg.d_value}x{fpa_cfg.d_key}")
        self.out_dir = Path(out_dir) if out_dir is not None else None
        seeds = np.random.SeedSequence(train_cfg.seed).spawn(4)
        self.painter = painter if painter is not None else Painter(fpa_cfg, rng=np.random.default_rng(seeds[0]), dtype=dtype)
        self.disc = Discriminator(fpa_cfg.c, fpa_cfg.d_key, widths=train_cfg.disc_widths,
                                  rng=np.random.default_rng(seeds[1]), dtype=dtype)
        self.unet = None
        if mode != "fpa":
            self.unet = UNet(fpa_cfg.c, widths=unet_widths, rng=np.random.default_rng(seeds[3]), dtype=dtype)
        if mode == "refine":
            self.painter.set_trainable(False)
        self.rng = np.random.default_rng(seeds[2])
        self.cursor = DataCursor(self.dataset)
        self.g_state, self.d_state = AdamState(), AdamState()
        self.step_count = 0
        self.best_rffd: float | None = None
        self.history: list[dict] = []

    # -- generator view ------------------------------------------------
    @property
    def g_params(self) -> dict[str, Tensor]:
        if self.mode == "joint":
            return {**{f"painter.{k}": v for k, v in self.painter.params.items()},
                    **{f"unet.{k}": v for k, v in self.unet.params.items()}}
        return self.unet.params if self.mode == "refine" else self.painter.params

    def generate(self, z) -> Tensor:
        img = self.painter.generate(z)[0]
        return self.unet.refine(img) if self.unet is not None else img

    def sample(self, n: int, seed: int = 1234, batch_size: int = 256) -> np.ndarray:
        rng = np.random.default_rng(seed)
        out = []
        for start in range(0, n, batch_size):
            m = min(batch_size, n - start)
            z = rng.standard_normal((m, self.fpa_cfg.d_latent)).astype(self.painter.dtype)
            out.append(self.generate(z).data)
        return np.concatenate(out, axis=0)

    # -- one iteration -------------------------------------------------
    def _latents(self) -> np.ndarray:
        return self.rng.standard_normal((self.cfg.batch_size, self.fpa_cfg.d_latent)).astype(self.painter.dtype)

    def _adam(self, params, state) -> None:
        adam_step(params, None, state, self.cfg.lr, self.cfg.adam_beta1, self.cfg.adam_beta2, self.cfg.adam_eps)
        for p in params.values():
            p.grad = None

    def _check(self, loss: Tensor, what: str) -> float:
        value = float(loss.data)
        if not np.isfinite(value):
            raise DivergenceError(f"{what} loss became non-finite at step {self.step_count}")
        return value

    def d_step(self) -> float:
        self.disc.zero_grad()
        real = Tensor(self.cursor.next_batch(self.cfg.batch_size))
        fake = Tensor(self.generate(self._latents()).data)
        with Tape():
            s_real, r8, r16 = self.disc(real)
            s_fake, _, _ = self.disc(fake, with_recon=False)
            loss = hinge_d_loss(s_real, s_fake)
            if self.cfg.recon_weight:
                loss = loss + self.cfg.recon_weight * recon_loss(r8, r16, real)
        value = self._check(loss, "discriminator")
        backward(loss)
        self._adam(self.disc.params, self.d_state)
        return value

    def g_step(self) -> float:
        z = self._latents()
        # the discriminator stays frozen through backward so no gradient reaches it
        with no_grad_arrays(self.disc.parameters()):
            with Tape():
                s_fake, _, _ = self.disc(self.generate(z), with_recon=False)
                loss = hinge_g_loss(s_fake)
            value = self._check(loss, "generator")
            backward(loss)
        self._adam(self.g_params, self.g_state)
        return value

    def train_step(self) -> tuple[float, float]:
        d = 0.0
        for _ in range(self.cfg.d_steps_per_g_step):
            d = self.d_step()
        g = self.g_step()
        self.step_count += 1
        return d, g

    # -- evaluation & persistence ----------------------------------------
    def evaluate(self, n: int | None = None) -> float:
        n = n or self.cfg.eval_n
        return rffd(self.dataset, lambda k: self.sample(k), n=n, seed=self.cfg.metric_seed)

    def checkpoint(self) -> Checkpoint:
        tensors = {}
        tensors.update(self.painter.state_arrays("painter."))
        tensors.update(self.disc.state_arrays("disc."))
        if self.unet is not None:
            tensors.update(self.unet.state_arrays("unet."))
        for tag, st in (("adam_g", self.g_state), ("adam_d", self.d_state)):
            for k, v in st.m.items():
                tensors[f"{tag}.m.{k}"] = v
            for k, v in st.v.items():
                tensors[f"{tag}.v.{k}"] = v
        meta = {
            "mode": self.mode,
            "fpa": config_to_dict(self.fpa_cfg),
            "train": config_to_dict(self.cfg),
            "step": self.step_count,
            "rng": self.rng.bit_generator.state,
            "adam_g_t": self.g_state.t,
            "adam_d_t": self.d_state.t,
            "data_cursor": [self.cursor.epoch, self.cursor.pos],
            "best_rffd": self.best_rffd,
            "unet_widths": self.unet.widths if self.unet is not None else None,
            "dtype": np.dtype(self.painter.dtype).name,
        }
        return Checkpoint(meta, tensors)

    def load_state(self, ckpt: Checkpoint) -> None:
        """Restore parameters, optimiser moments, RNG and data position from ``ckpt``."""
        meta = ckpt.meta
        self.painter.load_arrays(ckpt.tensors, "painter.")
        self.disc.load_arrays(ckpt.tensors, "disc.")
        if self.unet is not None and meta.get("mode") in ("refine", "joint"):
            self.unet.load_arrays(ckpt.tensors, "unet.")
        if meta.get("mode") == self.mode:
            for tag, st, key in (("adam_g", self.g_state, "adam_g_t"), ("adam_d", self.d_state, "adam_d_t")):
                st.m = {k[len(tag) + 3:]: v.copy() for k, v in ckpt.tensors.items() if k.startswith(f"{tag}.m.")}
                st.v = {k[len(tag) + 3:]: v.copy() for k, v in ckpt.tensors.items() if k.startswith(f"{tag}.v.")}
                st.t = int(meta[key])
            self.rng.bit_generator.state = meta["rng"]
            self.step_count = int(meta["step"])
            self.cursor = DataCursor(self.dataset, *meta["data_cursor"])
            self.best_rffd = meta.get("best_rffd")

    def _save(self, name: str) -> Path | None:
        if self.out_dir is None:
            return None
        self.out_dir.mkdir(parents=True, exist_ok=True)
        return self.checkpoint().save(self.out_dir / name)

    def _log(self, record: dict) -> None:
        self.history.append(record)
        log.info("step %d %s", record.get("step"), record)
        if self.out_dir is not None:
            with open(self.out_dir / "metrics.jsonl", "a", encoding="utf-8") as f:
                f.write(json.dumps(record, sort_keys=True) + "\n")

    def run(self, steps: int | None = None, evaluate: bool = True) -> Iterator[Checkpoint]:
        """Train for ``steps`` iterations, yielding a checkpoint at start, every eval and at the end.

        With an output directory, checkpoints are also written as
        ``ckpt_<step>.fpa``, ``final.fpa`` and (lowest RFFD) ``best.fpa``.
        A non-finite loss raises :class:`DivergenceError`; files already
        written are kept.
        """
        steps = self.cfg.steps if steps is None else steps
        end = self.step_count + steps
        if self.out_dir is not None:
            self.out_dir.mkdir(parents=True, exist_ok=True)
        yield self._mark(evaluate)
        while self.step_count < end:
            d, g = self.train_step()
            if self.step_count % self.cfg.eval_every == 0 or self.step_count == end:
                self._log({"step": self.step_count, "d_loss": d, "g_loss": g})
                yield self._mark(evaluate)
        self._save("final.fpa")

    def _mark(self, evaluate: bool) -> Checkpoint:
        record = {"step": self.step_count}
        if evaluate:
            score = self.evaluate()
            record["rffd"] = score
            if self.best_rffd is None or score < self.best_rffd:
                self.best_rffd = score
                self._save("best.fpa")
        self._log(record)
        self._save(f"ckpt_{self.step_count:07d}.fpa")
        return self.checkpoint()


def gan_train(fpa_cfg: FpaConfig, train_cfg: TrainConfig, out_dir=None, dataset: DatasetHandle | None = None,
              evaluate: bool = True) -> Iterator[Checkpoint]:
    """Stream of checkpoints from a fresh adversarial training run."""
    trainer = GanTrainer(fpa_cfg, train_cfg, dataset=dataset, out_dir=out_dir)
    yield from trainer.run(evaluate=evaluate)


def painter_from_checkpoint(ckpt: Checkpoint) -> Painter:
    cfg = config_from_dict(FpaConfig, ckpt.meta["fpa"])
    painter = Painter(cfg, dtype=np.dtype(ckpt.meta.get("dtype", "float32")))
    painter.load_arrays(ckpt.tensors, "painter.")
    return painter


def unet_from_checkpoint(ckpt: Checkpoint) -> UNet | None:
    if ckpt.meta.get("mode") not in ("refine", "joint"):
        return None
    cfg = config_from_dict(FpaConfig, ckpt.meta["fpa"])
    unet = UNet(cfg.c, widths=ckpt.meta["unet_widths"], dtype=np.dtype(ckpt.meta.get("dtype", "float32")))
    unet.load_arrays(ckpt.tensors, "unet.")
    return unet


def trainer_from_checkpoint(ckpt: Checkpoint, dataset: DatasetHandle | None = None, out_dir=None) -> GanTrainer:
    """Rebuild a trainer and restore its full state (resumable training)."""
    fpa_cfg = config_from_dict(FpaConfig, ckpt.meta["fpa"])
    train_cfg = config_from_dict(TrainConfig, ckpt.meta["train"])
    mode = ckpt.meta.get("mode", "fpa")
    kwargs = {"unet_widths": ckpt.meta["unet_widths"]} if mode != "fpa" else {}
    tr = GanTrainer(fpa_cfg, train_cfg, dataset=dataset, out_dir=out_dir, mode=mode,
                    dtype=np.dtype(ckpt.meta.get("dtype", "float32")), **kwargs)
    tr.load_state(ckpt)
    return tr


def train_refiner(painter_ckpt: Checkpoint | None, train_cfg: TrainConfig, dataset: DatasetHandle | None = None,
                  out_dir=None, unet_widths=(16, 32, 64), evaluate: bool = True) -> GanTrainer:
    """Adversarially train a U-Net on the outputs of a frozen pre-trained painter.

    A fresh discriminator is used. The painter's parameter buffers are never
    written; :meth:`Model.fingerprint` is identical before and after.
    """
    if painter_ckpt is None:
        raise CheckpointError("train_refiner needs a painter checkpoint")
    painter = painter_from_checkpoint(painter_ckpt)
    tr = GanTrainer(painter.cfg, train_cfg, dataset=dataset, out_dir=out_dir, mode="refine",
                    painter=painter, unet_widths=unet_widths, dtype=painter.dtype)
    for _ in tr.run(evaluate=evaluate):
        pass
    return tr

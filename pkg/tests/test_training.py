import math

import numpy as np
import pytest

from fwpaint.checkpoint import Checkpoint, CheckpointError
from fwpaint.config import FpaConfig, TrainConfig
from fwpaint.data import DatasetError, synth_generate
from fwpaint.optim import AdamState, adam_step
from fwpaint.tensor import NumericError, Tensor
from fwpaint.training import (DivergenceError, GanTrainer, gan_train, painter_from_checkpoint, train_refiner,
                              trainer_from_checkpoint)


def tiny_fpa(**kw):
    base = dict(T=3, c=1, d_key=16, d_value=16, d_latent=4, d_in=3, d_in_prime=4, d_hidden=6)
    base.update(kw)
    return FpaConfig(**base)


def tiny_train(**kw):
    base = dict(batch_size=4, steps=5, eval_every=1000, eval_n=64, disc_widths=[4, 4],
                dataset={"synth": "blobs", "n": 64})
    base.update(kw)
    return TrainConfig(**base)


# adam -----------------------------------------------------------------------

def scalar_adam(p, grads, lr, b1=0.5, b2=0.999, eps=1e-8):
    m = v = 0.0
    for t, g in enumerate(grads, 1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        p -= lr * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps)
    return p, m, v


def test_adam_zero_grad_keeps_params_and_decays_moments():
    p = {"w": Tensor(np.array([1.0, -2.0]))}
    st = AdamState(m={"w": np.array([0.4, -0.2])}, v={"w": np.array([0.1, 0.3])}, t=3)
    adam_step(p, {"w": np.zeros(2)}, st, lr=0.1)
    np.testing.assert_array_equal(st.m["w"], [0.2, -0.1])
    np.testing.assert_allclose(st.v["w"], [0.0999, 0.2997], rtol=1e-15)
    # with nonzero m the params still move; from a fresh state they must not
    fresh = {"w": Tensor(np.array([1.0, -2.0]))}
    adam_step(fresh, {"w": np.zeros(2)}, AdamState(), lr=0.1)
    np.testing.assert_array_equal(fresh["w"].data, [1.0, -2.0])


def test_adam_first_step_is_sign_scaled():
    p = {"w": Tensor(np.array([0.5, 0.5, 0.5]))}
    adam_step(p, {"w": np.array([3.0, -0.01, 1e-3])}, AdamState(), lr=0.01)
    np.testing.assert_allclose(p["w"].data, [0.49, 0.51, 0.49], atol=1e-7)


@pytest.mark.parametrize("grads", [[0.3, 0.3], [1.5, -0.7], [2e-3, 5.0, -1.0]])
def test_adam_matches_scalar_oracle(grads):
    p = {"w": Tensor(np.array([0.25]))}
    st = AdamState()
    for g in grads:
        adam_step(p, {"w": np.array([g])}, st, lr=2e-4)
    expected, m, v = scalar_adam(0.25, grads, 2e-4)
    assert p["w"].data[0] == pytest.approx(expected, abs=1e-15)
    assert st.m["w"][0] == pytest.approx(m, rel=1e-14)
    assert st.v["w"][0] == pytest.approx(v, rel=1e-14)
    assert st.t == len(grads)


def test_adam_nan_aborts_before_update():
    p = {"a": Tensor(np.ones(2)), "b": Tensor(np.ones(2))}
    st = AdamState()
    with pytest.raises(NumericError, match="'b'"):
        adam_step(p, {"a": np.ones(2), "b": np.array([1.0, np.nan])}, st, lr=0.1)
    np.testing.assert_array_equal(p["a"].data, 1.0)
    assert st.t == 0


# trainer ---------------------------------------------------------------------

def test_zero_steps_yields_initial_checkpoint_only(tmp_path):
    ckpts = list(gan_train(tiny_fpa(), tiny_train(steps=0), out_dir=tmp_path, evaluate=False))
    assert len(ckpts) == 1 and ckpts[0].meta["step"] == 0
    assert sorted(p.name for p in tmp_path.glob("*.fpa")) == ["ckpt_0000000.fpa", "final.fpa"]


def test_determinism_over_100_steps():
    cfg = tiny_train(steps=100)
    a = list(gan_train(tiny_fpa(), cfg, evaluate=False))[-1].to_bytes()
    b = list(gan_train(tiny_fpa(), cfg, evaluate=False))[-1].to_bytes()
    assert a == b


def test_different_seeds_differ():
    a = list(gan_train(tiny_fpa(), tiny_train(seed=0), evaluate=False))[-1]
    b = list(gan_train(tiny_fpa(), tiny_train(seed=1), evaluate=False))[-1]
    assert a.to_bytes() != b.to_bytes()


def test_checkpoint_round_trip_byte_identical(tmp_path):
    ck = list(gan_train(tiny_fpa(), tiny_train(), evaluate=False))[-1]
    path = ck.save(tmp_path / "a.fpa")
    again = Checkpoint.load(path)
    assert again.to_bytes() == path.read_bytes()
    again.save(tmp_path / "b.fpa")
    assert (tmp_path / "b.fpa").read_bytes() == path.read_bytes()


def test_resume_continues_identically():
    cfg = tiny_train(steps=6)
    full = list(gan_train(tiny_fpa(), cfg, evaluate=False))[-1]
    tr = GanTrainer(tiny_fpa(), cfg)
    mid = list(tr.run(steps=3, evaluate=False))[-1]
    resumed = trainer_from_checkpoint(Checkpoint.from_bytes(mid.to_bytes()))
    end = list(resumed.run(steps=3, evaluate=False))[-1]
    assert end.to_bytes() == full.to_bytes()


def test_checkpoint_preserves_samples():
    tr = GanTrainer(tiny_fpa(), tiny_train())
    list(tr.run(evaluate=False))
    ck = Checkpoint.from_bytes(tr.checkpoint().to_bytes())
    again = trainer_from_checkpoint(ck)
    assert again.sample(8).tobytes() == tr.sample(8).tobytes()


def test_bad_checkpoint_bytes():
    with pytest.raises(CheckpointError):
        Checkpoint.from_bytes(b"NOPE")
    ck = Checkpoint({"step": 1}, {"w": np.ones((2, 3), np.float32)}).to_bytes()
    with pytest.raises(CheckpointError):
        Checkpoint.from_bytes(ck[:-3])
    with pytest.raises(CheckpointError):
        Checkpoint.load("/nonexistent/ckpt.fpa")


def test_divergence_aborts_and_keeps_files(tmp_path):
    tr = GanTrainer(tiny_fpa(), tiny_train(steps=3, eval_every=1), out_dir=tmp_path)
    it = tr.run(evaluate=False)
    next(it)
    next(it)
    tr.disc.params["head.b"].data[...] = np.nan
    with pytest.raises(DivergenceError):
        list(it)
    assert (tmp_path / "ckpt_0000001.fpa").exists()
    assert not (tmp_path / "final.fpa").exists()


def test_dataset_mismatch_rejected():
    ds = synth_generate("blobs", 8, 16, channels=3)
    with pytest.raises(DatasetError):
        GanTrainer(tiny_fpa(), tiny_train(), dataset=ds)


def test_rule_override_is_used():
    tr = GanTrainer(tiny_fpa(), tiny_train(rule="additive"))
    assert tr.painter.cfg.rule.value == "additive"


def test_evaluation_logs_rffd(tmp_path):
    tr = GanTrainer(tiny_fpa(), tiny_train(steps=2, eval_every=2), out_dir=tmp_path)
    list(tr.run())
    assert [r["step"] for r in tr.history if "rffd" in r] == [0, 2]
    assert (tmp_path / "best.fpa").exists() and (tmp_path / "metrics.jsonl").exists()


# refiner -----------------------------------------------------------------------

def painter_ckpt():
    return list(gan_train(tiny_fpa(), tiny_train(steps=2), evaluate=False))[-1]


def test_refiner_keeps_painter_bit_identical():
    ck = painter_ckpt()
    before = painter_from_checkpoint(ck).fingerprint()
    tr = train_refiner(ck, tiny_train(steps=4), unet_widths=(4, 4, 4), evaluate=False)
    assert tr.painter.fingerprint() == before
    assert tr.mode == "refine"


def test_refiner_zero_steps_leaves_unet_unchanged():
    ck = painter_ckpt()
    tr0 = GanTrainer(tiny_fpa(), tiny_train(steps=0), mode="refine", painter=painter_from_checkpoint(ck),
                     unet_widths=(4, 4, 4))
    start = tr0.unet.fingerprint()
    tr = train_refiner(ck, tiny_train(steps=0), unet_widths=(4, 4, 4), evaluate=False)
    assert tr.unet.fingerprint() == start


def test_refiner_needs_checkpoint():
    with pytest.raises(CheckpointError):
        train_refiner(None, tiny_train())


def test_joint_mode_updates_both_networks():
    tr = GanTrainer(tiny_fpa(), tiny_train(steps=2), mode="joint", unet_widths=(4, 4, 4))
    p0, u0 = tr.painter.fingerprint(), tr.unet.fingerprint()
    list(tr.run(evaluate=False))
    assert tr.painter.fingerprint() != p0 and tr.unet.fingerprint() != u0


def test_generator_step_leaves_discriminator_untouched():
    tr = GanTrainer(tiny_fpa(), tiny_train())
    tr.d_step()
    before = tr.disc.fingerprint()
    tr.g_step()
    assert tr.disc.fingerprint() == before
    assert all(p.grad is None for p in tr.disc.parameters())
    assert all(p.requires_grad for p in tr.disc.parameters())

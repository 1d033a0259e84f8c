"""End-to-end acceptance checks. Each test reports a one-line PASS/FAIL summary.

The GAN trend criteria (5, 6, 7, 9) share one set of training runs, built
lazily by the session fixture below. They take the better part of an hour
on one CPU core.
"""
import dataclasses
import time

import numpy as np
import pytest

from fwpaint.checkpoint import Checkpoint
from fwpaint.checks import run_suite
from fwpaint.config import FpaConfig, TrainConfig, load_preset
from fwpaint.data import from_uint8, read_image, to_uint8, write_image
from fwpaint.deltanet import make_episodes, train_fewshot
from fwpaint.metrics import singular_values
from fwpaint.painter import Painter
from fwpaint.rules import RuleStep, apply_additive, apply_delta
from fwpaint.tensor import Tensor
from fwpaint.training import GanTrainer, gan_train, painter_from_checkpoint, train_refiner
from fwpaint.viz import render_fastweights

SEEDS = (0, 1, 2)
GAN_STEPS = 5000
REFINE_STEPS = 2000


def desk_train(seed: int, steps: int = GAN_STEPS) -> TrainConfig:
    return TrainConfig(batch_size=16, steps=steps, seed=seed, eval_every=steps, eval_n=2048,
                       disc_widths=[32, 64], dataset={"synth": "blobs", "n": 4096})


def desk_run(rule: str, steps_t: int, seed: int) -> dict:
    fpa = dataclasses.replace(load_preset("desk16"), T=steps_t, rule=rule)
    tr = GanTrainer(fpa, desk_train(seed))
    start = time.perf_counter()
    ckpts = list(tr.run())
    scores = [r["rffd"] for r in tr.history if "rffd" in r]
    return {"initial": scores[0], "final": scores[-1], "ckpt": ckpts[-1], "dataset": tr.dataset,
            "seconds": time.perf_counter() - start}


class GanRuns:
    def __init__(self) -> None:
        self._runs: dict = {}
        self._refined: dict = {}

    def get(self, rule: str, steps_t: int, seed: int) -> dict:
        key = (rule, steps_t, seed)
        if key not in self._runs:
            self._runs[key] = desk_run(rule, steps_t, seed)
        return self._runs[key]

    def median_final(self, rule: str, steps_t: int) -> float:
        return float(np.median([self.get(rule, steps_t, s)["final"] for s in SEEDS]))

    def refined(self, seed: int) -> dict:
        if seed not in self._refined:
            base = self.get("delta", 16, seed)
            cfg = desk_train(seed, REFINE_STEPS)
            before = Checkpoint.from_bytes(base["ckpt"].to_bytes())
            start = time.perf_counter()
            tr = train_refiner(before, cfg, dataset=base["dataset"])
            self._refined[seed] = {"rffd": [r["rffd"] for r in tr.history if "rffd" in r][-1],
                                   "painter_hash": tr.painter.fingerprint(),
                                   "seconds": time.perf_counter() - start}
        return self._refined[seed]


@pytest.fixture(scope="session")
def gan_runs():
    return GanRuns()


# 1 -------------------------------------------------------------------------------

def test_c01_gradient_suite(criterion_report):
    start = time.perf_counter()
    results = run_suite("all")
    seconds = time.perf_counter() - start
    failed = [r.name for r in results if not r.passed]
    worst = max(r.max_rel_error / r.tolerance for r in results)
    ok = not failed and seconds < 120
    criterion_report(1, ok, f"{len(results) - len(failed)}/{len(results)} checks pass, "
                            f"worst error/tolerance {worst:.1e}, {seconds:.1f}s")
    assert not failed, failed
    assert seconds < 120


# 2 -------------------------------------------------------------------------------

def test_c02_delta_algebra(criterion_report):
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(50):
        dv, dk = rng.integers(1, 9, size=2)
        idx = rng.integers(dk)
        k = np.eye(dk)[idx]
        v = rng.standard_normal(dv)
        W = Tensor(rng.standard_normal((dv, dk)))
        s = RuleStep(Tensor(k), Tensor(v), Tensor(np.array(1.0)))
        once = apply_delta(W, s)
        twice = apply_delta(once, s)
        worst = max(worst, np.abs(twice.data - once.data).max(), np.abs(once.data @ k - v).max())
        # a soft key and a memory that is blind to it: delta and additive agree
        ks = rng.dirichlet(np.ones(dk))
        w0 = rng.standard_normal((dv, dk))
        w0 = w0 - np.outer(w0 @ ks, ks) / (ks @ ks)
        soft = RuleStep(Tensor(ks), Tensor(v), Tensor(np.array(rng.uniform(0.05, 0.95))))
        worst = max(worst, np.abs(apply_delta(Tensor(w0), soft).data - apply_additive(Tensor(w0), soft).data).max())
    criterion_report(2, worst <= 1e-12, f"max deviation {worst:.1e} over 50 random cases (tol 1e-12)")
    assert worst <= 1e-12


# 3 -------------------------------------------------------------------------------

def test_c03_rank_bound(criterion_report):
    failures, worst = 0, 0.0
    for steps in (1, 4, 8):
        for seed in range(20):
            p = Painter(FpaConfig(T=steps, c=1, d_key=16, d_value=16), seed=seed, dtype=np.float64)
            z = np.random.default_rng(seed).standard_normal(p.cfg.d_latent)
            img, _ = p.generate(z, pre_tanh=True)
            sv = singular_values(img.data[0])
            ratio = sv[steps:].max() / sv[0]
            worst = max(worst, ratio)
            failures += int(ratio >= 1e-6)
    criterion_report(3, failures == 0, f"{failures} failures in 60 (T, seed) cases, worst tail/sigma1 {worst:.1e}")
    assert failures == 0


# 4 -------------------------------------------------------------------------------

def test_c04_trace_consistency(criterion_report):
    rng = np.random.default_rng(4)
    worst = 0.0
    for i in range(20):
        steps = (1, 16, 64)[i % 3]
        seed = int(rng.integers(2**31))
        p = Painter(dataclasses.replace(load_preset("desk16"), T=steps), seed=seed, dtype=np.float32)
        z = np.random.default_rng(seed).standard_normal(p.cfg.d_latent).astype(np.float32)
        pre, _ = p.generate(z, pre_tanh=True)
        _, trace = p.generate(z, record_trace=True)
        worst = max(worst, float(np.abs(trace.updates.sum(0) - pre.data).max()))
    criterion_report(4, worst <= 1e-5, f"max |sum(updates) - image| = {worst:.1e} over 20 cases (tol 1e-5)")
    assert worst <= 1e-5


# 5 -------------------------------------------------------------------------------

def test_c05_gan_trend(gan_runs, criterion_report):
    runs = [gan_runs.get("delta", 16, s) for s in SEEDS]
    ratios = [r["final"] / r["initial"] for r in runs]
    median = float(np.median(ratios))
    slowest = max(r["seconds"] for r in runs)
    ok = median < 0.5 and slowest < 30 * 60
    detail = ", ".join(f"{r['initial']:.2f}->{r['final']:.2f}" for r in runs)
    criterion_report(5, ok, f"median final/initial RFFD {median:.3f} (< 0.5) [{detail}], slowest run {slowest:.0f}s")
    assert median < 0.5
    assert slowest < 30 * 60


# 6 -------------------------------------------------------------------------------

def test_c06_rule_ablation(gan_runs, criterion_report):
    delta, additive = gan_runs.median_final("delta", 16), gan_runs.median_final("additive", 16)
    criterion_report(6, delta <= additive, f"median RFFD delta {delta:.3f} vs additive {additive:.3f}")
    assert delta <= additive


# 7 -------------------------------------------------------------------------------

def test_c07_step_count(gan_runs, criterion_report):
    t16, t4 = gan_runs.median_final("delta", 16), gan_runs.median_final("delta", 4)
    criterion_report(7, t16 <= t4, f"median RFFD T=16 {t16:.3f} vs T=4 {t4:.3f}")
    assert t16 <= t4


# 8 -------------------------------------------------------------------------------

def test_c08_fewshot(tmp_path, criterion_report):
    start = time.perf_counter()
    res = train_fewshot(ways=5, shots=5, episodes=20000, seed=0)
    ep = make_episodes(np.random.default_rng(1), 1, 5, 5)
    records: list = []
    res.net.logits(ep.inputs, records=records)
    paths = render_fastweights(records[0], tmp_path, head=0)
    seconds = time.perf_counter() - start
    ok = res.accuracy >= 0.95 and seconds < 15 * 60 and len(paths) == 2 * 26 + 1
    criterion_report(8, ok, f"query accuracy {res.accuracy:.3f} after {res.episodes_seen} episodes, "
                            f"{len(paths)} frames, {seconds:.0f}s")
    assert res.accuracy >= 0.95
    assert res.episodes_seen <= 20000
    assert len(paths) == 2 * 26 + 1 and all(p.exists() for p in paths)
    assert seconds < 15 * 60


# 9 -------------------------------------------------------------------------------

def test_c09_unet_refinement(gan_runs, criterion_report):
    base, refined, identical = [], [], True
    for s in SEEDS:
        run = gan_runs.get("delta", 16, s)
        ref = gan_runs.refined(s)
        identical &= ref["painter_hash"] == painter_from_checkpoint(run["ckpt"]).fingerprint()
        base.append(run["final"])
        refined.append(ref["rffd"])
    b, r = float(np.median(base)), float(np.median(refined))
    gain = 1 - r / b
    ok = gain >= 0.10 and identical
    criterion_report(9, ok, f"median RFFD unrefined {b:.3f} -> refined {r:.3f} ({100 * gain:.1f}% better, need 10%), "
                            f"painter unchanged: {identical}")
    assert identical
    assert gain >= 0.10


# 10 ------------------------------------------------------------------------------

def test_c10_determinism_and_persistence(tmp_path, criterion_report):
    fpa = FpaConfig(T=4, c=1, d_key=16, d_value=16, d_latent=8, d_hidden=16, d_in=4, d_in_prime=8)
    cfg = TrainConfig(batch_size=8, steps=100, eval_every=1000, disc_widths=[8, 8],
                      dataset={"synth": "blobs", "n": 256})
    a = list(gan_train(fpa, cfg, evaluate=False))[-1].to_bytes()
    b = list(gan_train(fpa, cfg, evaluate=False))[-1].to_bytes()
    same_runs = a == b
    path = tmp_path / "ck.fpa"
    path.write_bytes(a)
    Checkpoint.load(path).save(tmp_path / "again.fpa")
    round_trip = (tmp_path / "again.fpa").read_bytes() == a
    img = np.random.default_rng(10).uniform(-1, 1, (3, 16, 16)).astype(np.float32)
    img[:, 0, :4] = [[-1, 1, 0, 1 / 255]] * 3
    write_image(tmp_path / "img.png", img)
    png_err = float(np.abs(read_image(tmp_path / "img.png") - img).max())
    exact = np.array_equal(read_image(tmp_path / "img.png"), from_uint8(to_uint8(img)))
    ok = same_runs and round_trip and png_err <= 1 / 127.5 and exact
    criterion_report(10, ok, f"100-step runs identical: {same_runs}, checkpoint round trip identical: {round_trip}, "
                             f"PNG max error {png_err:.5f} (<= {1 / 127.5:.5f})")
    assert same_runs and round_trip
    assert png_err <= 1 / 127.5 and exact

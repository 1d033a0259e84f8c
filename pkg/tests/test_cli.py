import json
import subprocess
import sys

import numpy as np
import pytest

from fwpaint.checkpoint import Checkpoint
from fwpaint.cli import EXIT_GRADCHECK, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, main

TINY = {
    "fpa": {"T": 3, "c": 1, "d_key": 16, "d_value": 16, "d_latent": 4, "d_in": 3, "d_in_prime": 4, "d_hidden": 6},
    "train": {"batch_size": 4, "steps": 3, "eval_every": 1000, "eval_n": 32, "disc_widths": [4, 4],
              "dataset": {"synth": "blobs", "n": 32}},
}


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "run.json"
    cfg.write_text(json.dumps(TINY), encoding="utf-8")
    assert main(["train", "--config", str(cfg), "--out", str(root / "run"), "--no-eval"]) == EXIT_OK
    return root


def test_train_zero_steps_writes_initial_checkpoint(tmp_path, trained):
    out = tmp_path / "z"
    assert main(["train", "--config", str(trained / "run.json"), "--steps", "0", "--out", str(out),
                 "--no-eval"]) == EXIT_OK
    assert sorted(p.name for p in out.glob("*.fpa")) == ["ckpt_0000000.fpa", "final.fpa"]
    assert Checkpoint.load(out / "final.fpa").meta["step"] == 0


def test_train_overrides(tmp_path, trained):
    out = tmp_path / "o"
    assert main(["train", "--config", str(trained / "run.json"), "--steps", "1", "--rule", "oja",
                 "--steps-t", "2", "--seed", "5", "--out", str(out), "--no-eval"]) == EXIT_OK
    meta = Checkpoint.load(out / "final.fpa").meta
    assert meta["fpa"]["T"] == 2 and meta["fpa"]["rule"] == "oja" and meta["train"]["seed"] == 5


def test_train_deterministic(tmp_path, trained):
    blobs = []
    for name in ("a", "b"):
        main(["train", "--config", str(trained / "run.json"), "--out", str(tmp_path / name), "--no-eval"])
        blobs.append((tmp_path / name / "final.fpa").read_bytes())
    assert blobs[0] == blobs[1] == (trained / "run" / "final.fpa").read_bytes()


def test_paint_raw_sums_to_final(tmp_path, trained):
    out = tmp_path / "paint"
    assert main(["paint", "--ckpt", str(trained / "run" / "final.fpa"), "--seed", "3", "--out", str(out),
                 "--raw"]) == EXIT_OK
    raw = np.load(out / "trace_raw.npz")
    assert raw["updates"].shape[0] == 3
    np.testing.assert_allclose(raw["updates"].sum(0), raw["final"], atol=1e-5)
    assert (out / "trace_grid.png").exists() and (out / "step_003_cumulative.png").exists()
    assert (out / "image.png").exists()


def test_sample_and_eval(tmp_path, trained, capsys):
    ckpt = str(trained / "run" / "final.fpa")
    assert main(["sample", "--ckpt", ckpt, "--n", "5", "--out", str(tmp_path / "s")]) == EXIT_OK
    assert len(list((tmp_path / "s").glob("sample_*.png"))) == 5
    capsys.readouterr()
    assert main(["eval", "--ckpt", ckpt, "--n", "32"]) == EXIT_OK
    first = capsys.readouterr().out
    assert first.startswith("rffd=") and "step=3" in first
    main(["eval", "--ckpt", ckpt, "--n", "32"])
    assert capsys.readouterr().out == first


def test_synth_data_then_eval_on_folder(tmp_path, trained, capsys):
    folder = tmp_path / "imgs"
    assert main(["synth-data", "--kind", "blobs", "--n", "40", "--res", "16", "--channels", "1",
                 "--out", str(folder)]) == EXIT_OK
    assert len(list(folder.glob("*.png"))) == 40
    assert main(["eval", "--ckpt", str(trained / "run" / "final.fpa"), "--data", str(folder), "--n", "32"]) == EXIT_OK
    assert str(folder) in capsys.readouterr().out


def test_refine_train(tmp_path, trained):
    out = tmp_path / "ref"
    assert main(["refine-train", "--ckpt", str(trained / "run" / "final.fpa"), "--steps", "1", "--out", str(out),
                 "--no-eval"]) == EXIT_OK
    meta = Checkpoint.load(out / "final.fpa").meta
    assert meta["mode"] == "refine"
    before = Checkpoint.load(trained / "run" / "final.fpa").subset("painter.")
    after = Checkpoint.load(out / "final.fpa").subset("painter.")
    assert all(before[k].tobytes() == after[k].tobytes() for k in before)


def test_gradcheck_rules_passes(capsys):
    assert main(["gradcheck", "--module", "rules"]) == EXIT_OK
    assert "gradient checks passed" in capsys.readouterr().out


def test_gradcheck_failure_exit_code(monkeypatch):
    from fwpaint import cli
    from fwpaint.gradcheck import GradCheckResult

    bad = GradCheckResult(name="fake", max_rel_error=1.0, tolerance=1e-5, checked=1)
    monkeypatch.setattr(cli, "run_suite", lambda module, seed=0: [bad])
    assert main(["gradcheck"]) == EXIT_GRADCHECK


def test_fewshot_with_render(tmp_path):
    out = tmp_path / "fw"
    assert main(["fewshot", "--ways", "2", "--shots", "1", "--steps", "16", "--eval-every", "16",
                 "--render", str(out)]) == EXIT_OK
    assert (out / "layer0_head0" / "trace_grid.png").exists()
    assert (out / "layer1_head3" / "step_003_update.png").exists()


@pytest.mark.parametrize("argv", [
    [],
    ["train"],
    ["paint", "--ckpt", "/nonexistent.fpa", "--out", "x"],
    ["gradcheck", "--module", "nope"],
])
def test_usage_errors(argv):
    assert main(argv) == EXIT_USAGE


def test_config_errors(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"fpa": {"T": 3, "colour": 1}}), encoding="utf-8")
    assert main(["train", "--config", str(bad), "--out", str(tmp_path / "o")]) == EXIT_USAGE
    bad.write_text("{not json", encoding="utf-8")
    assert main(["train", "--config", str(bad), "--out", str(tmp_path / "o")]) == EXIT_USAGE


def test_numeric_failure_exit_code(tmp_path, trained):
    ck = Checkpoint.load(trained / "run" / "final.fpa")
    ck.tensors["painter.w_slow"] = np.full_like(ck.tensors["painter.w_slow"], np.nan)
    ck.save(tmp_path / "nan.fpa")
    assert main(["paint", "--ckpt", str(tmp_path / "nan.fpa"), "--out", str(tmp_path / "p")]) == EXIT_NUMERIC


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "fwpaint", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    for cmd in ("train", "sample", "paint", "eval", "gradcheck", "fewshot", "refine-train", "synth-data"):
        assert cmd in proc.stdout

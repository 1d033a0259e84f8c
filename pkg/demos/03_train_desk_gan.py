"""Train a small painter on synthetic blobs, then sample from it and watch it paint.

Run: python3 demos/03_train_desk_gan.py [steps] [out_dir]
A few hundred steps take about a minute on one core; RFFD keeps falling for
several thousand.
"""
import sys
from pathlib import Path

import numpy as np

from fwpaint.config import TrainConfig, load_preset
from fwpaint.data import write_image
from fwpaint.training import GanTrainer
from fwpaint.viz import grid, render_trace, to_rgb

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 500
out = Path(sys.argv[2] if len(sys.argv) > 2 else "demo_out/desk_gan")

# %% Hinge-loss GAN: the discriminator also reconstructs real images at 8x8 and 16x16.
train = TrainConfig(batch_size=16, steps=steps, eval_every=max(steps // 4, 1), eval_n=1024,
                    disc_widths=[32, 64], dataset={"synth": "blobs", "n": 4096})
trainer = GanTrainer(load_preset("desk16"), train, out_dir=out)
for _ in trainer.run():
    rec = trainer.history[-1]
    print(f"step {rec['step']:5d}  rffd {rec.get('rffd', float('nan')):.3f}")

# %% A contact sheet of 8 samples next to 8 training images.
fake = trainer.sample(8, seed=0)
real = trainer.dataset.sample(8, seed=0)
sheet = grid([[to_rgb((x + 1) / 2, 4) for x in fake], [to_rgb((x + 1) / 2, 4) for x in real]])
write_image(out / "samples_vs_real.png", sheet.transpose(2, 0, 1) / 127.5 - 1)

# %% One painting, step by step.
z = np.random.default_rng(3).standard_normal(trainer.fpa_cfg.d_latent).astype(np.float32)
_, trace = trainer.painter.generate(z, record_trace=True)
render_trace(trace, out / "trace", scale=8)
print(f"checkpoints, samples and the paint trace are in {out}")

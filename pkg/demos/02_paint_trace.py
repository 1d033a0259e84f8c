"""Paint an image with an untrained painter and look at every rank-1 step.

Run: python3 demos/02_paint_trace.py [out_dir]
"""
import sys
from pathlib import Path

import numpy as np

from fwpaint.config import load_preset
from fwpaint.metrics import singular_values
from fwpaint.painter import Painter
from fwpaint.viz import render_trace

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out/paint_trace")

# %% The desk-scale preset paints 3-channel 16x16 images in 16 steps.
cfg = load_preset("desk16")
painter = Painter(cfg, seed=0, dtype=np.float64)
z = np.random.default_rng(1).standard_normal(cfg.d_latent)
image, trace = painter.generate(z, record_trace=True)
print(f"{len(trace)} steps, image shape {image.shape}")

# %% Each step adds one outer product per channel, so after t steps a channel
# has rank at most t. Singular values come from the Gram matrix, which resolves
# the tail only down to about 1e-8 of the largest one, hence the 1e-6 cutoff.
for t in (0, 3, 7, 15):
    sv = singular_values(trace.cumulative[t][0])
    print(f"after step {t + 1:2d}: numerical rank {int(np.sum(sv > 1e-6 * sv[0])):2d}")

# %% The learning rates stay strictly inside (0, 1) and the keys are distributions.
print("lr range:", float(trace.lrs.min()), float(trace.lrs.max()))
print("key sums:", np.unique(np.round(trace.keys.sum(-1), 12)))

# %% Render the update and cumulative rows. The frames are normalised by the
# norm of the final image, passed through tanh and min-max scaled per frame.
paths = render_trace(trace, out, scale=8)
print(f"wrote {len(paths)} files to {out}")

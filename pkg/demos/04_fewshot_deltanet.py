"""A two-layer DeltaNet learns 5-way 5-shot classification in context.

Each episode is a sequence of 25 labelled examples followed by one
unlabelled query. Nothing about the classes is stored in the slow weights;
the network has to write the support set into its fast weights and read
the answer back with the query.

Run: python3 demos/04_fewshot_deltanet.py [episodes] [out_dir]
"""
import sys
from pathlib import Path

import numpy as np

from fwpaint.deltanet import make_episodes, train_fewshot
from fwpaint.viz import render_fastweights

episodes = int(sys.argv[1]) if len(sys.argv) > 1 else 20000
out = Path(sys.argv[2] if len(sys.argv) > 2 else "demo_out/fewshot")

# %% Train on freshly generated episodes; accuracy is measured on held-out episodes.
res = train_fewshot(ways=5, shots=5, episodes=episodes, seed=0)
for h in res.history:
    print(f"{h['episodes']:6d} episodes  loss {h['loss']:.3f}  query accuracy {h['accuracy']:.3f}")

# %% Record the fast weights of every head while the network reads one episode.
ep = make_episodes(np.random.default_rng(1), 1, 5, 5)
records: list = []
logits = res.net.logits(ep.inputs, records=records)
print("predicted", int(np.argmax(logits.data[0])), "target", int(ep.targets[0]))

# %% Top row: the rank-1 update written at each step. Bottom row: the fast
# weight matrix after that step. Blue is negative, red positive.
for li, rec in enumerate(records):
    for h in range(res.net.layers[li].heads):
        render_fastweights(rec, out / f"layer{li}_head{h}", head=h)
print(f"fast-weight frames in {out}")

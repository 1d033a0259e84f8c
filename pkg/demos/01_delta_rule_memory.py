"""Associative memory with rank-1 writes: delta rule versus purely additive writes.

Run: python3 demos/01_delta_rule_memory.py
"""
import numpy as np

from fwpaint.rules import RuleStep, apply_additive, apply_delta
from fwpaint.tensor import Tensor, softmax

rng = np.random.default_rng(0)
d_key, d_value, n_pairs = 8, 4, 6

# %% Keys pass through a softmax so they are positive and sum to one.
raw_keys = rng.standard_normal((n_pairs, d_key)) * 3
keys = softmax(Tensor(raw_keys)).data
values = rng.standard_normal((n_pairs, d_value))

# %% Write every pair into an empty memory with both rules. The delta rule
# gets lr = 1 / |k|^2, the step size at which a write fully corrects the
# memory's current answer for that key.
W_delta = Tensor(np.zeros((d_value, d_key)))
W_add = Tensor(np.zeros((d_value, d_key)))
for k, v in zip(keys, values):
    W_delta = apply_delta(W_delta, RuleStep(Tensor(k), Tensor(v), Tensor(np.array(1.0 / (k @ k)))))
    W_add = apply_additive(W_add, RuleStep(Tensor(k), Tensor(v), Tensor(np.array(1.0))))

# %% Read back with each key. The last write is recalled exactly by the delta
# rule; older pairs suffer only where later keys overlap them. Additive writes
# never correct anything, so every retrieval carries the sum of all overlaps.
print("pair  |delta error|  |additive error|")
for i, (k, v) in enumerate(zip(keys, values)):
    e_delta = np.linalg.norm(W_delta.data @ k - v)
    e_add = np.linalg.norm(W_add.data @ k - v)
    print(f"{i:4d}  {e_delta:13.4f}  {e_add:16.4f}")

# %% With one-hot keys and lr = 1, rewriting a key replaces its value outright.
one_hot = np.eye(d_key)[2]
new_v = rng.standard_normal(d_value)
W = Tensor(np.zeros((d_value, d_key)))
for v in (values[0], new_v):
    W = apply_delta(W, RuleStep(Tensor(one_hot), Tensor(v), Tensor(np.array(1.0))))
print("\none-hot key rewritten, retrieval equals the new value:", np.array_equal(W.data @ one_hot, new_v))

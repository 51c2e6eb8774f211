"""Neighborhood attention: clamped windows, relative bias, oracle equivalence.

Run with: python demos/03_neighborhood_attention.py
"""

import numpy as np

from natseg import (
    AttentionConfig,
    AttentionParams,
    build_neighborhood_index,
    neighborhood_attention,
)
from natseg.tensor import Tensor

rng = np.random.default_rng(1)

# Each pixel attends to a fixed odd-sided window.  Border windows are
# shifted inward, never shrunk, so cardinality is constant: window**2.
index = build_neighborhood_index(5, 5, window=3)
print("neighbors per pixel:", index.neighbors.shape[1])
print("center pixel (2,2) window:", sorted(index.neighbors[12]))
print("corner pixel (0,0) window (clamped):", sorted(index.neighbors[0]))

# Relative offsets address a (2w-1)x(2w-1) learnable bias table added to
# the logits before the scaled softmax.
cfg = AttentionConfig(dim=8, window=3, use_out_proj=False)
params = AttentionParams.create(cfg, rng)
print("bias table shape:", params.bias_table.shape)

x = Tensor(rng.standard_normal((1, 8, 5, 5)).astype(np.float32))
out = neighborhood_attention(x, params, cfg)
print("attention preserves shape:", out.shape == x.shape)

# Softmax shift invariance: moving the whole bias table leaves the
# output untouched.
params.bias_table.data += 10.0
shifted = neighborhood_attention(x, params, cfg)
print("bias-shift invariance:", np.allclose(out.data, shifted.data, atol=1e-6))

# Window 1 reduces attention to the bare value projection: a softmax
# over one element is always 1.
from natseg import pointwise_conv  # noqa: E402

cfg1 = AttentionConfig(dim=8, window=1, use_out_proj=False)
params1 = AttentionParams.create(cfg1, rng)
w1 = neighborhood_attention(x, params1, cfg1)
v_only = pointwise_conv(x, params1.proj_v)
print("window=1 equals value projection:", np.array_equal(w1.data, v_only.data))

# Equivalence with dense attention: build the full (P,P) logit matrix,
# mask everything outside each pixel's window to -inf, softmax, and mix.
# The windowed kernel computes the same thing without the P^2 cost.
pixels = 25
d = 8
q = params.proj_q.weight.data.reshape(d, d)
k = params.proj_k.weight.data.reshape(d, d)
v = params.proj_v.weight.data.reshape(d, d)
feats = x.data.reshape(d, pixels).T.astype(np.float64)
bias_flat = (params.bias_table.data.reshape(-1) - 10.0)  # undo the shift above
logits = np.full((pixels, pixels), -np.inf)
for p in range(pixels):
    for slot, j in enumerate(index.neighbors[p]):
        logits[p, j] = (
            feats[p] @ q.T @ (k @ feats[j]) + bias_flat[index.bias_index[p, slot]]
        ) / np.sqrt(d)
weights = np.exp(logits - logits.max(axis=1, keepdims=True))
weights /= weights.sum(axis=1, keepdims=True)
dense = (weights @ (feats @ v.T)).T.reshape(1, d, 5, 5)
print("matches masked dense attention:", np.abs(dense - out.data).max() < 1e-5)

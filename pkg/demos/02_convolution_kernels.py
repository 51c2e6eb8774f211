"""Convolution kernels: direct vs fast path, groups, and the HetConv fusion.

Run with: python demos/02_convolution_kernels.py
"""

import numpy as np

from natseg import Conv2dParams, HetConvLayer, conv2d, hetconv_forward, param_count
from natseg.tensor import Tensor

rng = np.random.default_rng(0)

# A 3x3 all-ones kernel over an all-ones image with zero padding counts
# how many in-bounds taps each output pixel sees: 9 in the middle, 4 in
# the corners.
x = Tensor(np.ones((1, 1, 3, 3), dtype=np.float32))
p = Conv2dParams(weight=Tensor(np.ones((1, 1, 3, 3))), bias=None, padding=1)
print("padded ones conv:\n", conv2d(x, p).data[0, 0])

# Two forward implementations, one contract: the im2col-style fast path
# and the explicit-loop direct path agree to float tolerance.
x = Tensor(rng.standard_normal((1, 4, 9, 9)).astype(np.float32))
p = Conv2dParams.create(4, 6, 3, rng=rng, stride=2, padding=1, groups=2)
fast = conv2d(x, p, method="fast").data
direct = conv2d(x, p, method="direct").data
print("fast vs direct max abs diff:", np.abs(fast - direct).max())

# Grouped convolution is exactly g independent convolutions on channel
# slices; group g never sees the other groups' channels.
x2 = x.data.copy()
x2[:, 2:] = 0.0
out_full = conv2d(Tensor(x.data), p).data
out_zeroed = conv2d(Tensor(x2), p).data
print("group isolation:", np.array_equal(out_full[:, :3], out_zeroed[:, :3]))

# The heterogeneous layer: three grouped 3x3 convolutions concatenated,
# plus a pointwise 1x1 over the full input, fused by addition.
layer = HetConvLayer.create(66, 66, rng)
x = Tensor(rng.standard_normal((1, 66, 32, 32)).astype(np.float32))
print("hetconv output shape:", hetconv_forward(x, layer).shape)

# Parameter economy is the point: at 66 channels the weight count drops
# from 9*66*66 to 3*(9*22*22) + 66*66.
het_weights = sum(t.size for name, t in layer.parameters() if name.endswith("weight"))
plain = Conv2dParams.create(66, 66, 3, rng=rng, with_bias=False)
print(f"hetconv weights: {het_weights:,} vs plain 3x3: {plain.weight.size:,}")
print("full layer learnables (incl. pointwise bias):", param_count(layer))

"""Tour of the tensor core: 4-D tensors, the operation tape, and gradients.

Run with: python demos/01_tape_autodiff.py
"""

import numpy as np

from natseg import (
    Tape,
    Tensor,
    backward,
    elementwise_add,
    elementwise_mul,
    grad_check,
    sum_all,
    uniform,
)
from natseg.tensor import mean_all, scale

# Every tensor is (batch, channels, height, width).  Scalars are (1,1,1,1).
x = Tensor(np.arange(8, dtype=np.float32).reshape(1, 2, 2, 2), requires_grad=True)
print("x shape:", x.shape)

# Seeded constructors are bit-reproducible: same seed, same buffer.
a = uniform((1, 2, 2, 2), seed=7)
b = uniform((1, 2, 2, 2), seed=7)
print("seeded fills identical:", a.data.tobytes() == b.data.tobytes())

# Recording a tape and replaying it backward fills the grad slots.
with Tape() as tape:
    y = elementwise_mul(x, x)          # x^2 elementwise
    loss = scale(sum_all(y), 0.5)      # 0.5 * sum(x^2)
print("loss:", loss.item())

backward(loss, tape)
print("grad equals x itself:", np.allclose(x.grad, x.data))

# Gradients accumulate across consumers: d/dx sum(x + x) = 2 everywhere.
x.zero_grad()
with Tape() as tape:
    loss = sum_all(elementwise_add(x, x))
backward(loss, tape)
print("two consumers, grad of 2:", np.unique(x.grad))

# The finite-difference harness compares analytic gradients against
# central differences, coordinate by coordinate.  ReLU kinks (where a
# perturbation flips a pre-activation sign) are excluded automatically.
from natseg import relu  # noqa: E402

z = Tensor(np.array([[[[-1.0, 0.0], [0.5, 2.0]]]]), requires_grad=True)
report = grad_check(lambda: mean_all(relu(z)), [("z", z)])
print(report.render())
print("coordinate at the kink was excluded:", report.excluded == 1)

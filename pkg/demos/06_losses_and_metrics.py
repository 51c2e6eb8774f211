"""Losses and metrics: BCE and soft-IoU gradients, Dice vs F1, rank AUC.

Run with: python demos/06_losses_and_metrics.py
"""

import numpy as np

from natseg import (
    Tape,
    Tensor,
    backward,
    bce_loss,
    confusion,
    prf_dice,
    roc_auc,
    soft_iou_loss,
)
from natseg.objectives import soft_dice, thresholded_dice

rng = np.random.default_rng(2)

pred = Tensor(rng.uniform(0.1, 0.9, (1, 1, 6, 6)).astype(np.float32), requires_grad=True)
target = Tensor((rng.random((1, 1, 6, 6)) > 0.6).astype(np.float32))

# Both losses are differentiable tape ops; gradients flow only through
# the prediction, never the label.
for name, loss_fn in (("bce", bce_loss), ("soft-iou", soft_iou_loss)):
    pred.zero_grad()
    with Tape() as tape:
        loss = loss_fn(pred, target)
    backward(loss, tape)
    print(f"{name}: value {loss.item():.4f}, grad norm {np.abs(pred.grad).sum():.4f}")

# Uncertainty costs ln 2 under BCE.
half = Tensor(np.full((1, 1, 4, 4), 0.5, dtype=np.float32))
labels = Tensor((rng.random((1, 1, 4, 4)) > 0.5).astype(np.float32))
print("BCE at p=0.5 equals ln 2:", round(bce_loss(half, labels).item(), 6))

# Thresholded Dice and F1 are the same statistic (2tp / (2tp+fp+fn));
# the soft Dice on raw probabilities is a different number, which is why
# reported F1 and Dice columns can disagree.
counts = confusion(pred, target)
report = prf_dice(counts, pred, target)
print("thresholded dice == f1:", thresholded_dice(counts) == report.f1)
print("soft dice (probabilities):", round(soft_dice(pred, target), 4))

# Rank-based AUC: the probability a random positive outscores a random
# negative, ties counted half.  Monotone transforms cannot change it.
scores = rng.random(200)
labels = (rng.random(200) > 0.7).astype(float)
base = roc_auc(scores, labels)
warped = roc_auc(np.exp(5.0 * scores), labels)
print("auc:", round(base, 4), "invariant under exp(5x):", abs(base - warped) < 1e-12)
print("separated scores give 1.0:",
      roc_auc(np.array([0.1, 0.2, 0.8, 0.9]), np.array([0.0, 0.0, 1.0, 1.0])) == 1.0)
print("constant scores give 0.5:",
      roc_auc(np.full(6, 0.4), np.array([1.0, 0.0, 1.0, 0.0, 1.0, 0.0])) == 0.5)

"""Canned gradient-check sweeps over every primitive and the full model."""

from __future__ import annotations

import numpy as np

from .attention import AttentionConfig, AttentionParams, neighborhood_attention
from .hetconv import HetConvLayer, ResidualUnit, hetconv_forward, residual_unit_forward
from .model import ModelConfig, build_model
from .nnops import (
    BatchNormState,
    Conv2dParams,
    batch_norm,
    conv2d,
    relu,
    sigmoid,
    softmax_lastdim,
    upsample_nearest2x,
)
from .objectives import bce_loss, soft_iou_loss
from .tensor import (
    GradCheckReport,
    Tensor,
    as_rng,
    concat_channels,
    elementwise_add,
    elementwise_mul,
    grad_check,
    slice_channels,
    mean_all,
)


def _rand(rng: np.random.Generator, shape, requires_grad=True) -> Tensor:
    return Tensor(rng.standard_normal(shape), requires_grad=requires_grad)


def check_primitives(seed: int = 0) -> list[tuple[str, GradCheckReport]]:
    """One gradient check per differentiable primitive, at module tolerances."""
    rng = as_rng(seed)
    reports: list[tuple[str, GradCheckReport]] = []

    x = _rand(rng, (2, 3, 5, 5))
    y = _rand(rng, (2, 3, 5, 5))
    reports.append(
        (
            "elementwise_add",
            grad_check(
                lambda: mean_all(elementwise_mul(elementwise_add(x, y), x)),
                [("x", x), ("y", y)],
                seed=seed,
            ),
        )
    )

    a = _rand(rng, (1, 2, 4, 4))
    b = _rand(rng, (1, 3, 4, 4))
    reports.append(
        (
            "concat_channels",
            grad_check(
                lambda: mean_all(elementwise_mul(concat_channels(a, b), concat_channels(a, b))),
                [("a", a), ("b", b)],
                seed=seed,
            ),
        )
    )
    reports.append(
        (
            "slice_channels",
            grad_check(
                lambda: mean_all(elementwise_mul(slice_channels(b, 1, 3), slice_channels(b, 1, 3))),
                [("b", b)],
                seed=seed,
            ),
        )
    )

    conv = Conv2dParams.create(4, 6, 3, rng, stride=2, padding=1, groups=2)
    xc = _rand(rng, (1, 4, 9, 9))
    reports.append(
        (
            "conv2d (grouped, strided)",
            grad_check(
                lambda: mean_all(sigmoid(conv2d(xc, conv))),
                [("x", xc), *conv.parameters("conv.")],
                seed=seed,
            ),
        )
    )

    bn = BatchNormState.create(3)
    xb = _rand(rng, (2, 3, 6, 6))
    reports.append(
        (
            "batch_norm (train)",
            grad_check(
                lambda: mean_all(sigmoid(batch_norm(xb, bn))),
                [("x", xb), *bn.parameters("bn.")],
                seed=seed,
            ),
        )
    )
    bn_eval = BatchNormState.create(3)
    bn_eval.running_mean = rng.standard_normal(3).astype(bn_eval.running_mean.dtype)
    bn_eval.running_var = (
        0.5 + rng.random(3).astype(bn_eval.running_var.dtype)
    )
    bn_eval.training = False
    reports.append(
        (
            "batch_norm (eval)",
            grad_check(
                lambda: mean_all(sigmoid(batch_norm(xb, bn_eval))),
                [("x", xb), *bn_eval.parameters("bn.")],
                seed=seed,
            ),
        )
    )

    xr = _rand(rng, (1, 2, 5, 5))
    reports.append(
        ("relu", grad_check(lambda: mean_all(sigmoid(relu(xr))), [("x", xr)], seed=seed))
    )
    xs = _rand(rng, (1, 2, 5, 5))
    reports.append(
        ("sigmoid", grad_check(lambda: mean_all(sigmoid(xs)), [("x", xs)], seed=seed))
    )
    xm = _rand(rng, (1, 1, 3, 7))
    reports.append(
        (
            "softmax_lastdim",
            grad_check(
                lambda: mean_all(elementwise_mul(softmax_lastdim(xm), xm)),
                [("x", xm)],
                seed=seed,
            ),
        )
    )
    xu = _rand(rng, (1, 2, 3, 3))
    reports.append(
        (
            "upsample_nearest2x",
            grad_check(
                lambda: mean_all(sigmoid(upsample_nearest2x(xu))),
                [("x", xu)],
                seed=seed,
            ),
        )
    )

    het = HetConvLayer.create(6, 6, rng)
    xh = _rand(rng, (1, 6, 5, 5))
    reports.append(
        (
            "hetconv",
            grad_check(
                lambda: mean_all(sigmoid(hetconv_forward(xh, het))),
                [("x", xh), *het.parameters("het.")],
                seed=seed,
                max_coords_per_param=4,
            ),
        )
    )

    for variant in ("v1", "v2"):
        unit = ResidualUnit.create(6, 9 if variant == "v2" else 8, variant, rng, stride=2)
        xv = _rand(rng, (1, 6, 8, 8))
        reports.append(
            (
                f"residual_unit ({variant})",
                grad_check(
                    lambda: mean_all(sigmoid(residual_unit_forward(xv, unit))),
                    [("x", xv), *unit.parameters("unit.")],
                    seed=seed,
                    max_coords_per_param=4,
                ),
            )
        )

    cfg = AttentionConfig(dim=6, window=3)
    params = AttentionParams.create(cfg, rng)
    xa = _rand(rng, (1, 6, 5, 5))
    reports.append(
        (
            "neighborhood_attention",
            grad_check(
                lambda: mean_all(sigmoid(neighborhood_attention(xa, params, cfg))),
                [("x", xa), *params.parameters("attn.")],
                seed=seed,
                max_coords_per_param=4,
            ),
        )
    )

    target = Tensor((rng.random((1, 1, 6, 6)) > 0.6).astype(np.float32))
    logits = _rand(rng, (1, 1, 6, 6))
    reports.append(
        (
            "bce_loss",
            grad_check(
                lambda: bce_loss(sigmoid(logits), target), [("logits", logits)], seed=seed
            ),
        )
    )
    logits2 = _rand(rng, (1, 1, 6, 6))
    reports.append(
        (
            "soft_iou_loss",
            grad_check(
                lambda: soft_iou_loss(sigmoid(logits2), target),
                [("logits", logits2)],
                seed=seed,
            ),
        )
    )
    return reports


def check_model(
    seed: int = 0, variant: str = "v2", max_coords_per_param: int = 2
) -> list[tuple[str, GradCheckReport]]:
    """End-to-end check: BCE of a desk-scale model against finite differences."""
    rng = as_rng(seed)
    cfg = ModelConfig.desk_scale(variant, seed=seed)
    model = build_model(cfg).train()
    h, w = cfg.input_size
    x = Tensor(rng.random((1, 3, h, w)))
    target = Tensor((rng.random((1, 1, h, w)) > 0.8).astype(np.float32))
    report = grad_check(
        lambda: bce_loss(model.forward(x), target),
        list(model.parameters()),
        seed=seed,
        max_coords_per_param=max_coords_per_param,
    )
    return [(f"model ({variant}, {h}x{w})", report)]

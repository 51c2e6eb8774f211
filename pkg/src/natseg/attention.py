"""Neighborhood attention over feature maps.

Each pixel attends to a fixed odd-sided square window of neighbors; windows
are shifted inward at borders so every pixel keeps exactly window**2
neighbors.  Logits are scaled dot products of pixelwise query/key
projections plus a learnable bias per relative offset, softmaxed and used
to mix pixelwise value projections.  The attention core is a single fused
tape node with a hand-derived backward covering q, k, v and the bias table.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .nnops import Conv2dParams, pointwise_conv
from .tensor import Tensor, as_rng, elementwise_add, record_op, truncated_normal, zeros


@dataclass
class AttentionConfig:
    """Window geometry and block wiring for one attention stage."""

    dim: int
    window: int = 3
    use_out_proj: bool = True
    proj_bias: bool = True
    residual: bool = False  # add block input to attention output when set

    def __post_init__(self):
        if self.window < 1 or self.window % 2 == 0:
            raise ConfigError(f"window must be odd and >= 1, got {self.window}")
        if self.dim < 1:
            raise ConfigError(f"dim must be >= 1, got {self.dim}")


@dataclass
class NeighborhoodIndex:
    """Per-pixel neighbor coordinates and their bias-table slots.

    ``neighbors[p, j]`` is the flat pixel index of the j-th neighbor of
    pixel p; ``bias_index[p, j]`` addresses the flattened (2w-1)x(2w-1)
    relative-offset table.
    """

    height: int
    width: int
    window: int
    neighbors: np.ndarray
    bias_index: np.ndarray


def build_neighborhood_index(h: int, w_map: int, window: int) -> NeighborhoodIndex:
    """Window origins are clamped so border pixels keep window**2 neighbors."""
    if window % 2 == 0 or window < 1:
        raise ConfigError(f"window must be odd and >= 1, got {window}")
    if window > min(h, w_map):
        raise ConfigError(
            f"window {window} exceeds feature map {h}x{w_map}"
        )
    half = window // 2
    rows = np.arange(h)
    cols = np.arange(w_map)
    row_origin = np.clip(rows - half, 0, h - window)
    col_origin = np.clip(cols - half, 0, w_map - window)
    offsets = np.arange(window)
    # (h, window) neighbor rows per query row; same for columns
    nbr_rows = row_origin[:, None] + offsets[None, :]
    nbr_cols = col_origin[:, None] + offsets[None, :]
    # flat neighbor ids, row-major over the window: (h, w, window, window)
    flat = nbr_rows[:, None, :, None] * w_map + nbr_cols[None, :, None, :]
    neighbors = flat.reshape(h * w_map, window * window)
    span = 2 * window - 1
    d_rows = nbr_rows - rows[:, None] + window - 1
    d_cols = nbr_cols - cols[:, None] + window - 1
    bias = d_rows[:, None, :, None] * span + d_cols[None, :, None, :]
    bias_index = bias.reshape(h * w_map, window * window)
    return NeighborhoodIndex(h, w_map, window, neighbors, bias_index)


_INDEX_CACHE: dict[tuple[int, int, int], NeighborhoodIndex] = {}


def _cached_index(h: int, w_map: int, window: int) -> NeighborhoodIndex:
    key = (h, w_map, window)
    if key not in _INDEX_CACHE:
        _INDEX_CACHE[key] = build_neighborhood_index(h, w_map, window)
    return _INDEX_CACHE[key]


def attention_weights(
    query: np.ndarray, keys: np.ndarray, bias: np.ndarray
) -> np.ndarray:
    """Raw (pre-scaling, pre-softmax) logits for one query against its window."""
    query = np.asarray(query)
    keys = np.asarray(keys)
    bias = np.asarray(bias)
    if keys.shape[1] != query.shape[0] or bias.shape[0] != keys.shape[0]:
        raise ShapeError(
            f"incompatible attention shapes: q {query.shape}, "
            f"keys {keys.shape}, bias {bias.shape}"
        )
    return keys @ query + bias


@dataclass
class AttentionParams:
    """Pixelwise q/k/v projections, relative-offset bias table, output projection."""

    proj_q: Conv2dParams
    proj_k: Conv2dParams
    proj_v: Conv2dParams
    bias_table: Tensor  # (1, 1, 2w-1, 2w-1)
    proj_out: Conv2dParams | None = None

    @classmethod
    def create(
        cls, cfg: AttentionConfig, rng: int | np.random.Generator
    ) -> "AttentionParams":
        rng = as_rng(rng)
        d = cfg.dim
        span = 2 * cfg.window - 1

        def proj() -> Conv2dParams:
            # attention projections use tighter init than conv stages
            weight = truncated_normal((d, d, 1, 1), 0.02, rng, requires_grad=True)
            bias = zeros((1, d, 1, 1), requires_grad=True) if cfg.proj_bias else None
            return Conv2dParams(weight, bias)

        proj_q, proj_k, proj_v = proj(), proj(), proj()
        bias_table = truncated_normal((1, 1, span, span), 0.02, rng, requires_grad=True)
        proj_out = proj() if cfg.use_out_proj else None
        return cls(proj_q, proj_k, proj_v, bias_table, proj_out)

    def parameters(self, prefix: str = ""):
        yield from self.proj_q.parameters(f"{prefix}proj_q.")
        yield from self.proj_k.parameters(f"{prefix}proj_k.")
        yield from self.proj_v.parameters(f"{prefix}proj_v.")
        yield f"{prefix}bias_table", self.bias_table
        if self.proj_out is not None:
            yield from self.proj_out.parameters(f"{prefix}proj_out.")


def _attention_core(
    q: Tensor, k: Tensor, v: Tensor, bias_table: Tensor, index: NeighborhoodIndex
) -> Tensor:
    n, d, h, w = q.shape
    pixels = h * w
    nbr = index.neighbors
    bidx = index.bias_index
    scale = 1.0 / math.sqrt(d)

    q_vec = q.data.reshape(n, d, pixels).transpose(0, 2, 1)  # (n, P, D)
    k_vec = k.data.reshape(n, d, pixels).transpose(0, 2, 1)
    v_vec = v.data.reshape(n, d, pixels).transpose(0, 2, 1)
    k_nbr = k_vec[:, nbr, :]  # (n, P, J, D)
    v_nbr = v_vec[:, nbr, :]
    bias = bias_table.data.reshape(-1)[bidx]  # (P, J)

    logits = (np.einsum("npd,npjd->npj", q_vec, k_nbr) + bias[None]) * scale
    logits -= logits.max(axis=-1, keepdims=True)
    weights = np.exp(logits)
    weights /= weights.sum(axis=-1, keepdims=True)
    out_vec = np.einsum("npj,npjd->npd", weights, v_nbr)
    out = out_vec.transpose(0, 2, 1).reshape(n, d, h, w)

    def back(grad: np.ndarray) -> tuple:
        g_vec = grad.reshape(n, d, pixels).transpose(0, 2, 1)  # (n, P, D)
        g_weights = np.einsum("npd,npjd->npj", g_vec, v_nbr)
        g_logits = (
            g_weights - (g_weights * weights).sum(axis=-1, keepdims=True)
        ) * weights * scale
        g_q = np.einsum("npj,npjd->npd", g_logits, k_nbr)
        g_k_nbr = g_logits[..., None] * q_vec[:, :, None, :]
        g_v_nbr = weights[..., None] * g_vec[:, :, None, :]
        batch_ix = np.arange(n)[:, None, None]
        g_k = np.zeros_like(k_vec)
        g_v = np.zeros_like(v_vec)
        np.add.at(g_k, (batch_ix, nbr[None]), g_k_nbr)
        np.add.at(g_v, (batch_ix, nbr[None]), g_v_nbr)
        g_bias_flat = np.zeros(bias_table.size, dtype=grad.dtype)
        np.add.at(g_bias_flat, bidx.reshape(-1), g_logits.sum(axis=0).reshape(-1))
        return (
            g_q.transpose(0, 2, 1).reshape(n, d, h, w),
            g_k.transpose(0, 2, 1).reshape(n, d, h, w),
            g_v.transpose(0, 2, 1).reshape(n, d, h, w),
            g_bias_flat.reshape(bias_table.shape),
        )

    return record_op((q, k, v, bias_table), out, back)


def neighborhood_attention(
    x: Tensor, params: AttentionParams, cfg: AttentionConfig
) -> Tensor:
    """Windowed scaled-dot-product attention; output shape equals input shape."""
    if x.c != cfg.dim:
        raise ShapeError(f"attention expects {cfg.dim} channels, got {x.c}")
    index = _cached_index(x.h, x.w, cfg.window)
    q = pointwise_conv(x, params.proj_q)
    k = pointwise_conv(x, params.proj_k)
    v = pointwise_conv(x, params.proj_v)
    out = _attention_core(q, k, v, params.bias_table, index)
    if params.proj_out is not None:
        out = pointwise_conv(out, params.proj_out)
    if cfg.residual:
        out = elementwise_add(x, out)
    return out


def attention_param_count(cfg: AttentionConfig) -> int:
    """Closed-form learnable-scalar count for a config."""
    d = cfg.dim
    n_proj = 4 if cfg.use_out_proj else 3
    count = n_proj * d * d + (2 * cfg.window - 1) ** 2
    if cfg.proj_bias:
        count += n_proj * d
    return count

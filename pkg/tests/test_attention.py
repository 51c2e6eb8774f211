"""Neighborhood attention against a masked global-attention oracle."""

import numpy as np
import pytest

from natseg.attention import (
    AttentionConfig,
    AttentionParams,
    attention_param_count,
    attention_weights,
    build_neighborhood_index,
    neighborhood_attention,
)
from natseg.errors import ConfigError, ShapeError
from natseg.nnops import sigmoid
from natseg.tensor import Tensor, grad_check, mean_all


# ---------------------------------------------------------------------------
# Oracle: full global attention with logits masked outside the window.
# The neighbor sets are rebuilt here with independent loop code.


def clamped_window_members(h, w_map, window, i, j):
    half = window // 2
    r0 = min(max(i - half, 0), h - window)
    c0 = min(max(j - half, 0), w_map - window)
    return [
        (r, c) for r in range(r0, r0 + window) for c in range(c0, c0 + window)
    ]


def global_attention_oracle(x, params, cfg):
    """(P,P) attention in float64 with -inf outside each pixel's window."""
    n, d, h, w_map = x.shape
    pixels = h * w_map
    wq = params.proj_q.weight.data.reshape(d, d).astype(np.float64)
    wk = params.proj_k.weight.data.reshape(d, d).astype(np.float64)
    wv = params.proj_v.weight.data.reshape(d, d).astype(np.float64)
    bq = params.proj_q.bias.data.reshape(d).astype(np.float64) if params.proj_q.bias is not None else 0.0
    bk = params.proj_k.bias.data.reshape(d).astype(np.float64) if params.proj_k.bias is not None else 0.0
    bv = params.proj_v.bias.data.reshape(d).astype(np.float64) if params.proj_v.bias is not None else 0.0
    table = params.bias_table.data.reshape(2 * cfg.window - 1, 2 * cfg.window - 1).astype(np.float64)

    out = np.zeros((n, d, h, w_map))
    for b in range(n):
        feats = x.data[b].reshape(d, pixels).T.astype(np.float64)  # (P, D)
        q = feats @ wq.T + bq
        k = feats @ wk.T + bk
        v = feats @ wv.T + bv
        logits = np.full((pixels, pixels), -np.inf)
        for i in range(h):
            for j in range(w_map):
                p = i * w_map + j
                for (r, c) in clamped_window_members(h, w_map, cfg.window, i, j):
                    bias = table[r - i + cfg.window - 1, c - j + cfg.window - 1]
                    logits[p, r * w_map + c] = (q[p] @ k[r * w_map + c] + bias) / np.sqrt(d)
        shifted = logits - logits.max(axis=1, keepdims=True)
        weights = np.exp(shifted)
        weights /= weights.sum(axis=1, keepdims=True)
        out[b] = (weights @ v).T.reshape(d, h, w_map)
    if params.proj_out is not None:
        wo = params.proj_out.weight.data.reshape(d, d).astype(np.float64)
        bo = (
            params.proj_out.bias.data.reshape(d).astype(np.float64)
            if params.proj_out.bias is not None
            else 0.0
        )
        flat = out.reshape(n, d, pixels).transpose(0, 2, 1)
        flat = flat @ wo.T + bo
        out = flat.transpose(0, 2, 1).reshape(n, d, h, w_map)
    return out


class TestNeighborhoodIndex:
    def test_interior_pixel_centered(self):
        index = build_neighborhood_index(5, 5, 3)
        got = sorted(index.neighbors[2 * 5 + 2])
        expected = sorted(r * 5 + c for r in (1, 2, 3) for c in (1, 2, 3))
        assert got == expected

    def test_corner_pixel_clamped(self):
        index = build_neighborhood_index(5, 5, 3)
        got = sorted(index.neighbors[0])
        expected = sorted(r * 5 + c for r in (0, 1, 2) for c in (0, 1, 2))
        assert got == expected

    def test_every_pixel_has_nine_inbounds_neighbors(self):
        index = build_neighborhood_index(7, 9, 3)
        assert index.neighbors.shape == (63, 9)
        assert (index.neighbors >= 0).all() and (index.neighbors < 63).all()
        # matches the independent loop construction everywhere
        for i in range(7):
            for j in range(9):
                expected = sorted(
                    r * 9 + c for (r, c) in clamped_window_members(7, 9, 3, i, j)
                )
                assert sorted(index.neighbors[i * 9 + j]) == expected

    def test_window_too_large_rejected(self):
        with pytest.raises(ConfigError):
            build_neighborhood_index(2, 5, 3)

    def test_even_window_rejected(self):
        with pytest.raises(ConfigError):
            build_neighborhood_index(5, 5, 2)

    def test_bias_index_covers_relative_offsets(self):
        index = build_neighborhood_index(4, 4, 3)
        span = 2 * 3 - 1
        assert (index.bias_index >= 0).all() and (index.bias_index < span * span).all()
        # interior pixel sees the full centered offset block
        interior = index.bias_index[1 * 4 + 1]
        expected = sorted((dr + 2) * span + (dc + 2) for dr in (-1, 0, 1) for dc in (-1, 0, 1))
        assert sorted(interior) == expected


class TestAttentionWeights:
    def test_zero_query_zero_bias(self):
        logits = attention_weights(np.zeros(4), np.ones((9, 4)), np.zeros(9))
        np.testing.assert_array_equal(logits, np.zeros(9))

    def test_basis_query_projects_first_component(self):
        q = np.zeros(4)
        q[0] = 1.0
        keys = np.zeros((9, 4))
        keys[:, 0] = np.arange(1, 10)
        logits = attention_weights(q, keys, np.zeros(9))
        np.testing.assert_array_equal(logits, np.arange(1.0, 10.0))

    def test_random_case_matches_loop_oracle(self, rng):
        q = rng.standard_normal(6)
        keys = rng.standard_normal((9, 6))
        bias = rng.standard_normal(9)
        got = attention_weights(q, keys, bias)
        expected = np.array([q @ keys[j] + bias[j] for j in range(9)])
        np.testing.assert_allclose(got, expected, rtol=1e-6)

    def test_dimension_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            attention_weights(np.zeros(3), np.zeros((9, 4)), np.zeros(9))


def _identity_proj(d):
    from natseg.nnops import Conv2dParams

    return Conv2dParams(
        weight=Tensor(np.eye(d, dtype=np.float32).reshape(d, d, 1, 1), requires_grad=True),
        bias=None,
    )


class TestNeighborhoodAttentionForward:
    def test_uniform_softmax_averages_neighborhood(self, rng):
        d = 4
        cfg = AttentionConfig(dim=d, window=3, use_out_proj=False, proj_bias=False)
        params = AttentionParams.create(cfg, rng)
        params.proj_q.weight.data[:] = 0.0
        params.bias_table.data[:] = 0.0
        params.proj_v = _identity_proj(d)
        x = Tensor(rng.standard_normal((1, d, 5, 5)).astype(np.float32))
        out = neighborhood_attention(x, params, cfg).data
        index = build_neighborhood_index(5, 5, 3)
        flat = x.data.reshape(d, 25)
        for p in range(25):
            expected = flat[:, index.neighbors[p]].mean(axis=1)
            np.testing.assert_allclose(out.reshape(d, 25)[:, p], expected, atol=1e-6)

    def test_bridge_scale_shape(self, rng):
        cfg = AttentionConfig(dim=512, window=3)
        params = AttentionParams.create(cfg, rng)
        x = Tensor(rng.random((1, 512, 48, 48)).astype(np.float32))
        assert neighborhood_attention(x, params, cfg).shape == (1, 512, 48, 48)

    def test_matches_masked_global_oracle(self, rng):
        cfg = AttentionConfig(dim=8, window=3, use_out_proj=False)
        params = AttentionParams.create(cfg, rng)
        x = Tensor(rng.standard_normal((1, 8, 5, 5)).astype(np.float32))
        got = neighborhood_attention(x, params, cfg).data
        expected = global_attention_oracle(x, params, cfg)
        np.testing.assert_allclose(got, expected, atol=1e-5)

    def test_matches_oracle_with_out_proj_and_batch(self, rng):
        cfg = AttentionConfig(dim=4, window=3, use_out_proj=True)
        params = AttentionParams.create(cfg, rng)
        x = Tensor(rng.standard_normal((2, 4, 4, 6)).astype(np.float32))
        got = neighborhood_attention(x, params, cfg).data
        expected = global_attention_oracle(x, params, cfg)
        np.testing.assert_allclose(got, expected, atol=1e-5)

    def test_window_one_degenerates_to_value_projection(self, rng):
        from natseg.nnops import pointwise_conv

        cfg = AttentionConfig(dim=5, window=1, use_out_proj=False)
        params = AttentionParams.create(cfg, rng)
        x = Tensor(rng.standard_normal((1, 5, 4, 4)).astype(np.float32))
        got = neighborhood_attention(x, params, cfg).data
        np.testing.assert_array_equal(got, pointwise_conv(x, params.proj_v).data)

    def test_bias_table_shift_invariance(self, rng):
        cfg = AttentionConfig(dim=4, window=3, use_out_proj=False)
        params = AttentionParams.create(cfg, rng)
        x = Tensor(rng.standard_normal((1, 4, 5, 5)).astype(np.float32))
        base = neighborhood_attention(x, params, cfg).data
        params.bias_table.data += 2.5
        shifted = neighborhood_attention(x, params, cfg).data
        np.testing.assert_allclose(base, shifted, atol=1e-6)

    def test_output_shape_always_equals_input_shape(self, rng):
        for h, w_map in ((3, 3), (4, 7), (6, 5)):
            cfg = AttentionConfig(dim=6, window=3)
            params = AttentionParams.create(cfg, rng)
            x = Tensor(rng.standard_normal((1, 6, h, w_map)).astype(np.float32))
            assert neighborhood_attention(x, params, cfg).shape == x.shape

    def test_channel_mismatch_rejected(self, rng):
        cfg = AttentionConfig(dim=8, window=3)
        params = AttentionParams.create(cfg, rng)
        with pytest.raises(ShapeError):
            neighborhood_attention(Tensor(np.zeros((1, 4, 5, 5))), params, cfg)

    def test_residual_wiring_adds_input(self, rng):
        cfg_plain = AttentionConfig(dim=4, window=3, use_out_proj=False)
        params = AttentionParams.create(cfg_plain, rng)
        x = Tensor(rng.standard_normal((1, 4, 5, 5)).astype(np.float32))
        plain = neighborhood_attention(x, params, cfg_plain).data
        cfg_res = AttentionConfig(dim=4, window=3, use_out_proj=False, residual=True)
        with_res = neighborhood_attention(x, params, cfg_res).data
        np.testing.assert_allclose(with_res, plain + x.data, atol=1e-6)

    def test_gradients_pass_finite_differences(self, rng):
        cfg = AttentionConfig(dim=5, window=3)
        params = AttentionParams.create(cfg, rng)
        x = Tensor(rng.standard_normal((1, 5, 4, 4)), requires_grad=True)
        report = grad_check(
            lambda: mean_all(sigmoid(neighborhood_attention(x, params, cfg))),
            [("x", x), *params.parameters()],
            max_coords_per_param=4,
        )
        assert report.passed, report.render()


class TestAttentionParamCount:
    def test_small_config_enumeration(self):
        cfg = AttentionConfig(dim=8, window=3, use_out_proj=False, proj_bias=False)
        assert attention_param_count(cfg) == 3 * 64 + 25 == 217

    def test_window_one_bias_table_is_single_cell(self, rng):
        cfg = AttentionConfig(dim=4, window=1, use_out_proj=False, proj_bias=False)
        params = AttentionParams.create(cfg, rng)
        assert params.bias_table.size == 1
        assert attention_param_count(cfg) == 3 * 16 + 1

    def test_bridge_scale_enumeration(self):
        cfg = AttentionConfig(dim=512, window=3, use_out_proj=False, proj_bias=False)
        assert attention_param_count(cfg) == 3 * 512 * 512 + 25 == 786_457

    def test_closed_form_matches_actual_parameters(self, rng):
        for kwargs in (
            {"use_out_proj": True, "proj_bias": True},
            {"use_out_proj": False, "proj_bias": True},
            {"use_out_proj": True, "proj_bias": False},
        ):
            cfg = AttentionConfig(dim=6, window=3, **kwargs)
            params = AttentionParams.create(cfg, rng)
            total = sum(t.size for _, t in params.parameters())
            assert attention_param_count(cfg) == total

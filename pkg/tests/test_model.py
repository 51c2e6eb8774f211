"""Model assembly, forward wiring, summaries and structural invariants."""

import numpy as np
import pytest

from natseg.errors import ConfigError, ShapeError
from natseg.hetconv import param_count
from natseg.model import (
    ModelConfig,
    build_model,
    render_summary_csv,
    render_summary_text,
    summarize,
    total_param_count,
)
from natseg.objectives import bce_loss
from natseg.tensor import Tape, Tensor, backward


def desk_input(rng, cfg, batch=1):
    h, w = cfg.input_size
    return Tensor(rng.random((batch, 3, h, w)).astype(np.float32))


class TestConfigValidation:
    def test_input_size_divisibility(self):
        with pytest.raises(ConfigError, match="divisible by 8"):
            ModelConfig(input_size=(50, 50)).validate()

    def test_v2_width_divisibility(self):
        with pytest.raises(ConfigError, match="divisible by 3"):
            ModelConfig(variant="v2", input_size=(48, 48), base_width=10).validate()

    def test_window_must_fit_bridge(self):
        with pytest.raises(ConfigError, match="window"):
            ModelConfig(input_size=(16, 16), base_width=8, window=5).validate()

    def test_unknown_variant(self):
        with pytest.raises(ConfigError, match="variant"):
            ModelConfig(variant="v3").validate()

    def test_published_widths_selected_for_v2_base66(self):
        cfg = ModelConfig(variant="v2", base_width=66)
        assert cfg.resolved_widths() == (66, 126, 252, 510)

    def test_generic_schedule_otherwise(self):
        assert ModelConfig(variant="v1", base_width=64).resolved_widths() == (64, 128, 256, 512)
        assert ModelConfig(variant="v2", base_width=12, input_size=(48, 48)).resolved_widths() == (
            12,
            24,
            48,
            96,
        )


class TestBuildAndForward:
    def test_desk_scale_v2_forward_shape(self, rng):
        cfg = ModelConfig.desk_scale("v2", seed=0)
        model = build_model(cfg)
        out = model.forward(desk_input(rng, cfg))
        assert out.shape == (1, 1, 48, 48)
        assert (out.data > 0).all() and (out.data < 1).all()

    def test_desk_scale_v1_and_baseline(self, rng):
        for variant in ("v1", "baseline"):
            cfg = ModelConfig.desk_scale(variant, seed=0)
            model = build_model(cfg)
            assert (model.attention is None) == (variant == "baseline")
            out = model.forward(desk_input(rng, cfg))
            assert out.shape == (1, 1, 48, 48)

    def test_same_seed_builds_identical_parameters(self):
        cfg = ModelConfig.desk_scale("v2", seed=9)
        a = build_model(cfg)
        b = build_model(cfg)
        for (name_a, pa), (name_b, pb) in zip(a.parameters(), b.parameters()):
            assert name_a == name_b
            assert pa.data.tobytes() == pb.data.tobytes()

    def test_different_seed_differs(self):
        a = build_model(ModelConfig.desk_scale("v2", seed=1))
        b = build_model(ModelConfig.desk_scale("v2", seed=2))
        assert a.head.weight.data.tobytes() != b.head.weight.data.tobytes()

    def test_zeroed_head_outputs_half(self, rng):
        cfg = ModelConfig.desk_scale("v1", seed=0)
        model = build_model(cfg)
        model.head.weight.data[:] = 0.0
        model.head.bias.data[:] = 0.0
        out = model.forward(desk_input(rng, cfg))
        np.testing.assert_array_equal(out.data, np.full_like(out.data, 0.5))

    def test_input_shape_enforced(self, rng):
        model = build_model(ModelConfig.desk_scale("v2", seed=0))
        with pytest.raises(ShapeError):
            model.forward(Tensor(rng.random((1, 3, 40, 40)).astype(np.float32)))

    def test_eval_forward_is_deterministic_bitwise(self, rng):
        cfg = ModelConfig.desk_scale("v2", seed=4)
        model = build_model(cfg).eval()
        x = desk_input(rng, cfg)
        assert model.forward(x).data.tobytes() == model.forward(x).data.tobytes()

    def test_paper_scale_v1_forward(self, rng):
        # full 384x384 pass; the single slowest test in the suite
        cfg = ModelConfig.paper_scale("v1", seed=0)
        model = build_model(cfg).eval()
        out = model.forward(desk_input(rng, cfg))
        assert out.shape == (1, 1, 384, 384)
        assert (out.data > 0).all() and (out.data < 1).all()

    def test_encoder_decoder_parameter_gradients_flow(self, rng):
        cfg = ModelConfig.desk_scale("v2", seed=0)
        model = build_model(cfg)
        x = desk_input(rng, cfg)
        target = Tensor((rng.random((1, 1, 48, 48)) > 0.8).astype(np.float32))
        with Tape() as tape:
            loss = bce_loss(model.forward(x), target)
        backward(loss, tape)
        for name, p in model.parameters():
            assert p.grad is not None, f"no gradient reached {name}"
            assert np.isfinite(p.grad).all(), f"non-finite gradient at {name}"


class TestStructuralInvariants:
    def test_encoder_decoder_spatial_symmetry(self):
        cfg = ModelConfig.desk_scale("v2", seed=0)
        rows = summarize(cfg)
        by_unit = {}
        for r in rows:
            by_unit.setdefault(r.unit, r)
        for k in (1, 2, 3):
            enc = by_unit[f"E{4 - k}"]
            dec = by_unit[f"D{k}"]
            assert (enc.out_h, enc.out_w) == (dec.out_h, dec.out_w)

    def test_v2_cheaper_than_v1_at_matched_widths(self):
        widths = (66, 126, 252, 510)
        v1 = total_param_count(
            ModelConfig(variant="v1", stage_widths=widths, input_size=(384, 384))
        )
        v2 = total_param_count(
            ModelConfig(variant="v2", stage_widths=widths, input_size=(384, 384))
        )
        assert v2 < v1

    def test_one_adam_step_decreases_bce(self, rng):
        from natseg.training import AdamState, adam_step

        cfg = ModelConfig.desk_scale("v2", seed=2)
        model = build_model(cfg)
        x = desk_input(rng, cfg)
        target = Tensor((rng.random((1, 1, 48, 48)) > 0.85).astype(np.float32))

        def loss_value():
            return bce_loss(model.forward(x), target).item()

        model.zero_grad()
        with Tape() as tape:
            loss = bce_loss(model.forward(x), target)
        before = loss.item()
        backward(loss, tape)
        params = dict(model.parameters())
        raw = {k: p.data for k, p in params.items()}
        grads = {k: p.grad for k, p in params.items()}
        snapshot = {k: v.copy() for k, v in raw.items()}
        # line search downward until the step strictly decreases the loss
        for lr in (1e-2, 1e-3, 1e-4, 1e-5):
            adam_step(raw, grads, AdamState.create(raw, lr=lr))
            if loss_value() < before:
                break
            for k in raw:
                raw[k][...] = snapshot[k]
        else:
            pytest.fail("no learning rate in the sweep decreased the loss")


class TestSummarize:
    def test_v1_paper_rows_match_published_table(self):
        rows = summarize(ModelConfig.paper_scale("v1"))
        expected = [
            ("Input", "-", None, 384, 384, 3),
            ("E1", "3*3*64", 1, 384, 384, 64),
            ("E1", "3*3*64", 1, 384, 384, 64),
            ("E2", "3*3*128", 2, 192, 192, 128),
            ("E2", "3*3*128", 1, 192, 192, 128),
            ("E3", "3*3*256", 2, 96, 96, 256),
            ("E3", "3*3*256", 1, 96, 96, 256),
            ("Bridge", "3*3*512", 2, 48, 48, 512),
            ("Bridge", "3*3*512", 1, 48, 48, 512),
            ("NAT", "-", 1, 48, 48, 512),
            ("D1", "3*3*256", 1, 96, 96, 256),
            ("D1", "3*3*256", 1, 96, 96, 256),
            ("D2", "3*3*128", 1, 192, 192, 128),
            ("D2", "3*3*128", 1, 192, 192, 128),
            ("D3", "3*3*64", 1, 384, 384, 64),
            ("D3", "3*3*64", 1, 384, 384, 64),
            ("Output", "1*1", 1, 384, 384, 1),
        ]
        got = [(r.unit, r.filter_desc, r.stride, r.out_h, r.out_w, r.out_c) for r in rows]
        assert got == expected

    def test_v2_paper_rows_match_published_table(self):
        rows = summarize(ModelConfig.paper_scale("v2"))
        shapes = [(r.unit, r.out_h, r.out_w, r.out_c) for r in rows]
        assert shapes == [
            ("Input", 384, 384, 3),
            ("E1", 384, 384, 66),
            ("E1", 384, 384, 66),
            ("E2", 192, 192, 126),
            ("E2", 192, 192, 126),
            ("E3", 96, 96, 252),
            ("E3", 96, 96, 252),
            ("Bridge", 48, 48, 510),
            ("Bridge", 48, 48, 510),
            ("NAT", 48, 48, 510),
            ("D1", 96, 96, 252),
            ("D1", 96, 96, 252),
            ("D2", 192, 192, 126),
            ("D2", 192, 192, 126),
            ("D3", 384, 384, 66),
            ("D3", 384, 384, 66),
            ("Output", 384, 384, 1),
        ]
        e3 = [r for r in rows if r.unit == "E3"][0]
        assert e3.filter_desc == "[3*(3*3*84)]+[1*(1*1*252)]"
        # bridge groups follow the c_out/3 rule, with the table discrepancy noted
        bridge = [r for r in rows if r.unit == "Bridge"][0]
        assert bridge.filter_desc == "[3*(3*3*170)]+[1*(1*1*510)]"
        nat = [r for r in rows if r.unit == "NAT"][0]
        assert "c_out/3" in nat.note and "84" in nat.note

    def test_summary_params_sum_to_model_total(self):
        cfg = ModelConfig.desk_scale("v2", seed=0)
        rows = summarize(cfg)
        assert sum(r.params for r in rows) == total_param_count(cfg)

    def test_renderers(self):
        rows = summarize(ModelConfig.desk_scale("v1"))
        text = render_summary_text(rows)
        assert "Unit" in text and "total parameters:" in text
        csv_text = render_summary_csv(rows)
        header = csv_text.splitlines()[0]
        assert header == "unit,filter,stride,out_h,out_w,out_c,params"
        assert len(csv_text.splitlines()) == len(rows) + 1

    def test_baseline_has_no_attention_row(self):
        rows = summarize(ModelConfig.desk_scale("baseline"))
        assert all(r.unit != "NAT" for r in rows)


def test_param_count_on_model_object():
    cfg = ModelConfig.desk_scale("v2", seed=0)
    model = build_model(cfg)
    assert param_count(model) == total_param_count(cfg)

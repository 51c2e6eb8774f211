"""Network assembly: encoder, bridge, attention stage, decoder, output head.

Seven residual units form the U shape: three encoder stages (E1 stride 1,
E2/E3 stride 2), a stride-2 bridge, and three decoder stages that each
upsample, concatenate the matching encoder output and apply a stride-1
unit.  A neighborhood-attention block sits between bridge and decoder; the
head is a 1x1 convolution to one channel plus sigmoid.  ``summarize``
renders the layer table of any configuration without running a forward
pass at full scale.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

from .attention import AttentionConfig, AttentionParams, neighborhood_attention
from .errors import ConfigError, ShapeError
from .hetconv import ResidualUnit, param_count, residual_unit_forward
from .nnops import Conv2dParams, pointwise_conv, sigmoid, upsample_nearest2x
from .tensor import Tensor, as_rng, concat_channels

VARIANTS = ("v1", "v2", "baseline")

# Published layer-table widths for the hetconv variant.  They do not follow
# the (1,2,4,8) doubling schedule (126 and 510 instead of 132 and 528), so
# they are pinned explicitly and selected when base_width is 66.
PUBLISHED_V2_WIDTHS = (66, 126, 252, 510)

N_STAGES = 4  # E1, E2, E3, bridge


@dataclass
class ModelConfig:
    variant: str = "v1"
    input_size: tuple[int, int] = (384, 384)
    base_width: int = 64
    width_schedule: tuple[int, int, int, int] = (1, 2, 4, 8)
    stage_widths: tuple[int, int, int, int] | None = None
    window: int = 3
    attention_out_proj: bool = True
    attention_residual: bool = False
    seed: int = 0

    def resolved_widths(self) -> tuple[int, int, int, int]:
        if self.stage_widths is not None:
            return tuple(self.stage_widths)  # type: ignore[return-value]
        if self.variant == "v2" and self.base_width == 66:
            return PUBLISHED_V2_WIDTHS
        return tuple(self.base_width * m for m in self.width_schedule)  # type: ignore[return-value]

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        h, w = self.input_size
        if h % 8 != 0 or w % 8 != 0:
            raise ConfigError(
                f"input_size: {h}x{w} must be divisible by 8 (three stride-2 stages)"
            )
        widths = self.resolved_widths()
        if len(widths) != N_STAGES or any(c < 1 for c in widths):
            raise ConfigError(f"stage widths must be {N_STAGES} positive ints, got {widths}")
        if self.variant == "v2" and any(c % 3 != 0 for c in widths):
            raise ConfigError(
                f"stage_widths: v2 needs every stage width divisible by 3, got {widths}"
            )
        if self.window % 2 == 0 or self.window < 1:
            raise ConfigError(f"window: must be odd and >= 1, got {self.window}")
        if self.has_attention and self.window > min(h, w) // 8:
            raise ConfigError(
                f"window: {self.window} exceeds the {h // 8}x{w // 8} bridge map"
            )

    @property
    def has_attention(self) -> bool:
        return self.variant != "baseline"

    @property
    def bridge_dim(self) -> int:
        return self.resolved_widths()[3]

    def attention_config(self) -> AttentionConfig:
        return AttentionConfig(
            dim=self.bridge_dim,
            window=self.window,
            use_out_proj=self.attention_out_proj,
            residual=self.attention_residual,
        )

    @classmethod
    def paper_scale(cls, variant: str = "v1", seed: int = 0) -> "ModelConfig":
        base = 66 if variant == "v2" else 64
        return cls(variant=variant, input_size=(384, 384), base_width=base, seed=seed)

    @classmethod
    def desk_scale(cls, variant: str = "v2", seed: int = 0) -> "ModelConfig":
        """Small preset: 48x48 input, widths that keep full checks under a minute."""
        base = 12 if variant == "v2" else 16
        return cls(variant=variant, input_size=(48, 48), base_width=base, seed=seed)


class Model:
    """Built network: immutable wiring, mutable parameter values."""

    def __init__(self, cfg: ModelConfig):
        cfg.validate()
        self.cfg = cfg
        widths = cfg.resolved_widths()
        unit_variant = "v2" if cfg.variant == "v2" else "v1"
        rng = as_rng(cfg.seed)

        self.enc1 = ResidualUnit.create(3, widths[0], unit_variant, rng, stride=1)
        self.enc2 = ResidualUnit.create(widths[0], widths[1], unit_variant, rng, stride=2)
        self.enc3 = ResidualUnit.create(widths[1], widths[2], unit_variant, rng, stride=2)
        self.bridge = ResidualUnit.create(widths[2], widths[3], unit_variant, rng, stride=2)
        if cfg.has_attention:
            self.attention_cfg = cfg.attention_config()
            self.attention = AttentionParams.create(self.attention_cfg, rng)
        else:
            self.attention_cfg = None
            self.attention = None
        self.dec1 = ResidualUnit.create(
            widths[3] + widths[2], widths[2], unit_variant, rng, stride=1
        )
        self.dec2 = ResidualUnit.create(
            widths[2] + widths[1], widths[1], unit_variant, rng, stride=1
        )
        self.dec3 = ResidualUnit.create(
            widths[1] + widths[0], widths[0], unit_variant, rng, stride=1
        )
        self.head = Conv2dParams.create(widths[0], 1, 1, rng, with_bias=True)

    def units(self):
        yield "e1", self.enc1
        yield "e2", self.enc2
        yield "e3", self.enc3
        yield "bridge", self.bridge
        yield "d1", self.dec1
        yield "d2", self.dec2
        yield "d3", self.dec3

    def parameters(self):
        for name, unit in self.units():
            yield from unit.parameters(f"{name}.")
        if self.attention is not None:
            yield from self.attention.parameters("attention.")
        yield from self.head.parameters("head.")

    def buffers(self):
        for name, unit in self.units():
            yield from unit.buffers(f"{name}.")

    def batch_norms(self):
        for _, unit in self.units():
            yield from unit.batch_norms()

    def train(self) -> "Model":
        for bn in self.batch_norms():
            bn.training = True
        return self

    def eval(self) -> "Model":
        for bn in self.batch_norms():
            bn.training = False
        return self

    def zero_grad(self) -> None:
        for _, p in self.parameters():
            p.zero_grad()

    def forward(self, x: Tensor) -> Tensor:
        h, w = self.cfg.input_size
        if (x.c, x.h, x.w) != (3, h, w):
            raise ShapeError(
                f"model expects (n,3,{h},{w}) input, got {x.shape}"
            )
        a1 = residual_unit_forward(x, self.enc1)
        a2 = residual_unit_forward(a1, self.enc2)
        a3 = residual_unit_forward(a2, self.enc3)
        b = residual_unit_forward(a3, self.bridge)
        if self.attention is not None:
            b = neighborhood_attention(b, self.attention, self.attention_cfg)
        d1 = residual_unit_forward(concat_channels(upsample_nearest2x(b), a3), self.dec1)
        d2 = residual_unit_forward(concat_channels(upsample_nearest2x(d1), a2), self.dec2)
        d3 = residual_unit_forward(concat_channels(upsample_nearest2x(d2), a1), self.dec3)
        return sigmoid(pointwise_conv(d3, self.head))

    def __call__(self, x: Tensor) -> Tensor:
        return self.forward(x)


def build_model(cfg: ModelConfig) -> Model:
    return Model(cfg)


# ---------------------------------------------------------------------------
# Layer summary


@dataclass
class LayerSummaryRow:
    unit: str
    filter_desc: str
    stride: int | None
    out_h: int
    out_w: int
    out_c: int
    params: int
    note: str = ""


def _filter_desc(variant: str, c_out: int, kernel: int) -> str:
    if kernel == 1:
        return "1*1"
    if variant == "v2":
        return f"[3*(3*3*{c_out // 3})]+[1*(1*1*{c_out})]"
    return f"3*3*{c_out}"


def _unit_rows(
    name: str, unit: ResidualUnit, variant: str, out_h: int, out_w: int
) -> list[LayerSummaryRow]:
    c_out = unit.c_out
    desc = _filter_desc(variant, c_out, 3)
    # shortcut and first BN params are attributed to the unit's first row
    first = param_count(unit.conv1) + param_count(unit.bn1)
    if unit.shortcut_conv is not None:
        first += param_count(unit.shortcut_conv) + param_count(unit.shortcut_bn)
    second = param_count(unit.conv2) + param_count(unit.bn2)
    return [
        LayerSummaryRow(name, desc, unit.stride, out_h, out_w, c_out, first),
        LayerSummaryRow(name, desc, 1, out_h, out_w, c_out, second),
    ]


def summarize(cfg: ModelConfig) -> list[LayerSummaryRow]:
    """One row per layer-table line; shapes follow the declared wiring."""
    cfg.validate()
    model = build_model(cfg)
    h, w = cfg.input_size
    widths = cfg.resolved_widths()
    variant = cfg.variant

    rows = [LayerSummaryRow("Input", "-", None, h, w, 3, 0)]
    sizes = [(h, w), (h // 2, w // 2), (h // 4, w // 4), (h // 8, w // 8)]
    for i, (name, unit) in enumerate(
        [("E1", model.enc1), ("E2", model.enc2), ("E3", model.enc3), ("Bridge", model.bridge)]
    ):
        rows.extend(_unit_rows(name, unit, variant, *sizes[i]))
    if cfg.has_attention:
        note = ""
        if variant == "v2":
            note = (
                "group width follows the c_out/3 rule "
                f"({widths[3] // 3} per group); the published table lists "
                f"{widths[2] // 3} here, inconsistent with its own "
                f"{widths[3]}-channel output"
            )
        rows.append(
            LayerSummaryRow(
                "NAT",
                "-",
                1,
                sizes[3][0],
                sizes[3][1],
                widths[3],
                param_count(model.attention),
                note=note,
            )
        )
    for i, (name, unit) in enumerate(
        [("D1", model.dec1), ("D2", model.dec2), ("D3", model.dec3)]
    ):
        rows.extend(_unit_rows(name, unit, variant, *sizes[2 - i]))
    rows.append(
        LayerSummaryRow("Output", "1*1", 1, h, w, 1, param_count(model.head))
    )
    return rows


def render_summary_text(rows: list[LayerSummaryRow]) -> str:
    headers = ("Unit", "Filter", "Stride", "Output size", "Params")
    table = [
        (
            r.unit,
            r.filter_desc,
            "-" if r.stride is None else str(r.stride),
            f"{r.out_h} * {r.out_w} * {r.out_c}",
            str(r.params),
        )
        for r in rows
    ]
    widths = [max(len(h), *(len(t[i]) for t in table)) for i, h in enumerate(headers)]
    lines = [
        "  ".join(h.ljust(widths[i]) for i, h in enumerate(headers)),
        "  ".join("-" * widths[i] for i in range(len(headers))),
    ]
    for t in table:
        lines.append("  ".join(t[i].ljust(widths[i]) for i in range(len(headers))))
    total = sum(r.params for r in rows)
    lines.append(f"total parameters: {total}")
    notes = [r.note for r in rows if r.note]
    for note in notes:
        lines.append(f"note: {note}")
    return "\n".join(lines)


def render_summary_csv(rows: list[LayerSummaryRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["unit", "filter", "stride", "out_h", "out_w", "out_c", "params"])
    for r in rows:
        writer.writerow(
            [
                r.unit,
                r.filter_desc,
                "" if r.stride is None else r.stride,
                r.out_h,
                r.out_w,
                r.out_c,
                r.params,
            ]
        )
    return buf.getvalue()


def total_param_count(cfg: ModelConfig) -> int:
    return param_count(build_model(cfg))

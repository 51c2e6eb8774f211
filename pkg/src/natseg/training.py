"""Adam optimizer, deterministic epoch loop and binary checkpoints.

Everything is seeded: the per-epoch shuffle derives from (seed, epoch), so
an interrupted run resumed from an epoch-boundary checkpoint is bitwise
identical to an uninterrupted one.  Checkpoints use a small versioned
binary format: magic ``NSEG``, a format word, a JSON manifest of named
(shape, offset) entries, then little-endian float32 payload.
"""

from __future__ import annotations

import csv
import json
import struct
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import SamplePair
from .errors import CheckpointError, ConfigError, TrainingAborted
from .model import Model, ModelConfig
from .objectives import bce_loss, evaluate, soft_iou_loss
from .tensor import Tape, Tensor, backward

LOSSES = ("bce", "iou")

CHECKPOINT_MAGIC = b"NSEG"
CHECKPOINT_FORMAT = 1


@dataclass
class AdamState:
    """Per-parameter first/second moment buffers plus the step counter."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def create(cls, params: dict[str, np.ndarray], lr: float) -> "AdamState":
        state = cls(lr=lr)
        for name, p in params.items():
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        return state


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray | None],
    state: AdamState,
) -> None:
    """One in-place update: p -= lr * m_hat / (sqrt(v_hat) + eps)."""
    for name, g in grads.items():
        if g is not None and not np.isfinite(g).all():
            raise TrainingAborted(
                f"non-finite gradient for parameter {name!r}", epoch=-1, step=state.t
            )
    state.t += 1
    bc1 = 1.0 - state.beta1**state.t
    bc2 = 1.0 - state.beta2**state.t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        m_hat = m / bc1
        v_hat = v / bc2
        p -= (state.lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(p.dtype)


@dataclass
class TrainConfig:
    loss: str = "bce"
    lr: float = 1e-4  # published preset: lr 1e-4, batch 1, 40 epochs
    batch_size: int = 1
    epochs: int = 40
    seed: int = 0
    checkpoint_every: int = 0  # epochs; 0 = final only
    eval_every: int = 1  # epochs between validation passes; 0 = never

    def validate(self) -> None:
        if self.loss not in LOSSES:
            raise ConfigError(f"loss must be one of {LOSSES}, got {self.loss!r}")
        if self.lr < 0 or self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("lr >= 0, batch_size >= 1, epochs >= 0 required")


@dataclass
class EpochRecord:
    epoch: int
    step: int
    loss: float
    val_f1: float | None = None
    val_dice_soft: float | None = None
    val_auc: float | None = None


@dataclass
class TrainLog:
    records: list[EpochRecord] = field(default_factory=list)
    step_losses: list[float] = field(default_factory=list)
    loss_name: str = "bce"
    checkpoint_path: Path | None = None

    def write_csv(self, path: Path | str) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["epoch", "step", "loss", "val_f1", "val_dice_soft", "val_auc"])
            for r in self.records:
                writer.writerow(
                    [
                        r.epoch,
                        r.step,
                        f"{r.loss:.8f}",
                        "" if r.val_f1 is None else f"{r.val_f1:.6f}",
                        "" if r.val_dice_soft is None else f"{r.val_dice_soft:.6f}",
                        "" if r.val_auc is None else f"{r.val_auc:.6f}",
                    ]
                )


def _epoch_permutation(seed: int, epoch: int, n: int) -> np.ndarray:
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, epoch])))
    return rng.permutation(n)


def _batch_tensors(samples: list[SamplePair]) -> tuple[Tensor, Tensor]:
    images = np.stack([s.image for s in samples])
    masks = np.stack([s.mask for s in samples])
    return Tensor(images), Tensor(masks)


def _loss_fn(name: str):
    return bce_loss if name == "bce" else soft_iou_loss


def predict_batch(model: Model, samples: list[SamplePair]) -> np.ndarray:
    """Eval-mode forward over a list of samples; returns (n,1,h,w) scores."""
    model.eval()
    x, _ = _batch_tensors(samples)
    return model.forward(x).data


def evaluate_samples(
    model: Model,
    samples: list[SamplePair],
    threshold: float = 0.5,
    auc_per_image: bool = False,
):
    preds = predict_batch(model, samples)
    masks = np.stack([s.mask for s in samples])
    return evaluate(preds, masks, threshold, auc_per_image=auc_per_image)


def train(
    model: Model,
    train_set: list[SamplePair],
    cfg: TrainConfig,
    val_set: list[SamplePair] | None = None,
    out_dir: Path | str | None = None,
    adam: AdamState | None = None,
    start_epoch: int = 0,
    progress: bool = True,
) -> TrainLog:
    """Run the epoch loop; returns per-epoch records and the final checkpoint.

    No augmentation is applied anywhere.  Passing ``adam``/``start_epoch``
    (normally via :func:`resume_training`) continues a checkpointed run.
    """
    cfg.validate()
    if not train_set:
        raise ConfigError("training set is empty")
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    params = dict(model.parameters())
    raw_params = {name: p.data for name, p in params.items()}
    if adam is None:
        adam = AdamState.create(raw_params, lr=cfg.lr)
    loss_fn = _loss_fn(cfg.loss)
    log = TrainLog(loss_name=cfg.loss)
    step = adam.t

    for epoch in range(start_epoch, cfg.epochs):
        model.train()
        order = _epoch_permutation(cfg.seed, epoch, len(train_set))
        epoch_losses: list[float] = []
        for lo in range(0, len(order), cfg.batch_size):
            batch = [train_set[i] for i in order[lo : lo + cfg.batch_size]]
            x, y = _batch_tensors(batch)
            model.zero_grad()
            with Tape() as tape:
                loss = loss_fn(model.forward(x), y)
            loss_value = loss.item()
            if not np.isfinite(loss_value):
                if out_dir is not None:
                    save_checkpoint(out_dir / "last_good.ckpt", model, adam, epoch, cfg.seed)
                raise TrainingAborted(
                    f"non-finite loss at epoch {epoch}, step {step}",
                    epoch=epoch,
                    step=step,
                )
            backward(loss, tape)
            grads = {name: p.grad for name, p in params.items()}
            adam_step(raw_params, grads, adam)
            step += 1
            epoch_losses.append(loss_value)
            log.step_losses.append(loss_value)

        record = EpochRecord(
            epoch=epoch, step=step, loss=float(np.mean(epoch_losses))
        )
        if val_set and cfg.eval_every and (epoch + 1) % cfg.eval_every == 0:
            report = evaluate_samples(model, val_set)
            record.val_f1 = report.f1
            record.val_dice_soft = report.dice_soft
            record.val_auc = report.auc
        log.records.append(record)
        if progress:
            val_part = (
                f" val_f1={record.val_f1:.4f}" if record.val_f1 is not None else ""
            )
            print(
                f"epoch {epoch + 1}/{cfg.epochs} loss({cfg.loss})={record.loss:.6f}{val_part}",
                file=sys.stdout,
            )
        if (
            out_dir is not None
            and cfg.checkpoint_every
            and (epoch + 1) % cfg.checkpoint_every == 0
        ):
            save_checkpoint(
                out_dir / f"epoch{epoch + 1:04d}.ckpt", model, adam, epoch + 1, cfg.seed
            )

    if out_dir is not None:
        log.checkpoint_path = out_dir / "final.ckpt"
        save_checkpoint(log.checkpoint_path, model, adam, cfg.epochs, cfg.seed)
    return log


# ---------------------------------------------------------------------------
# Checkpoints


def _model_config_dict(cfg: ModelConfig) -> dict:
    return {
        "variant": cfg.variant,
        "input_size": list(cfg.input_size),
        "base_width": cfg.base_width,
        "width_schedule": list(cfg.width_schedule),
        "stage_widths": None if cfg.stage_widths is None else list(cfg.stage_widths),
        "window": cfg.window,
        "attention_out_proj": cfg.attention_out_proj,
        "attention_residual": cfg.attention_residual,
        "seed": cfg.seed,
    }


def _model_config_from_dict(d: dict) -> ModelConfig:
    return ModelConfig(
        variant=d["variant"],
        input_size=tuple(d["input_size"]),
        base_width=d["base_width"],
        width_schedule=tuple(d["width_schedule"]),
        stage_widths=None if d["stage_widths"] is None else tuple(d["stage_widths"]),
        window=d["window"],
        attention_out_proj=d["attention_out_proj"],
        attention_residual=d["attention_residual"],
        seed=d["seed"],
    )


def _named_arrays(model: Model, adam: AdamState | None):
    """Everything a checkpoint must restore, in a fixed order."""
    for name, p in model.parameters():
        yield f"param.{name}", p.data
    for name, buf in model.buffers():
        yield f"buffer.{name}", buf
    if adam is not None:
        for name in adam.m:
            yield f"adam.m.{name}", adam.m[name]
        for name in adam.v:
            yield f"adam.v.{name}", adam.v[name]


def save_checkpoint(
    path: Path | str,
    model: Model,
    adam: AdamState | None = None,
    epoch: int = 0,
    seed: int = 0,
) -> None:
    entries = []
    payload = bytearray()
    offset = 0
    for name, arr in _named_arrays(model, adam):
        data = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        payload.extend(data)
        offset += len(data)
    manifest = {
        "format": CHECKPOINT_FORMAT,
        "config": _model_config_dict(model.cfg),
        "epoch": epoch,
        "seed": seed,
        "adam": None
        if adam is None
        else {
            "lr": adam.lr,
            "beta1": adam.beta1,
            "beta2": adam.beta2,
            "eps": adam.eps,
            "t": adam.t,
        },
        "entries": entries,
    }
    manifest_bytes = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_FORMAT))
        fh.write(struct.pack("<I", len(manifest_bytes)))
        fh.write(manifest_bytes)
        fh.write(payload)


@dataclass
class Checkpoint:
    model: Model
    adam: AdamState | None
    epoch: int
    seed: int


def load_checkpoint(path: Path | str) -> Checkpoint:
    """Parse and validate fully before constructing anything."""
    raw = Path(path).read_bytes()
    if len(raw) < 12 or raw[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    (fmt,) = struct.unpack_from("<I", raw, 4)
    if fmt != CHECKPOINT_FORMAT:
        raise CheckpointError(
            f"{path}: unsupported format {fmt} (expected {CHECKPOINT_FORMAT})"
        )
    (manifest_len,) = struct.unpack_from("<I", raw, 8)
    header_end = 12 + manifest_len
    if len(raw) < header_end:
        raise CheckpointError(f"{path}: truncated manifest")
    try:
        manifest = json.loads(raw[12:header_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt manifest: {exc}") from exc
    payload = raw[header_end:]

    arrays: dict[str, np.ndarray] = {}
    for entry in manifest["entries"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        end = start + 4 * count
        if end > len(payload):
            raise CheckpointError(
                f"{path}: truncated payload for entry {entry['name']!r}"
            )
        arrays[entry["name"]] = np.frombuffer(
            payload[start:end], dtype="<f4"
        ).reshape(shape)

    cfg = _model_config_from_dict(manifest["config"])
    model = Model(cfg)
    adam_meta = manifest["adam"]
    adam = (
        AdamState(
            lr=adam_meta["lr"],
            beta1=adam_meta["beta1"],
            beta2=adam_meta["beta2"],
            eps=adam_meta["eps"],
            t=adam_meta["t"],
        )
        if adam_meta is not None
        else None
    )

    for name, p in model.parameters():
        key = f"param.{name}"
        if key not in arrays:
            raise CheckpointError(f"{path}: missing entry {key!r}")
        if arrays[key].shape != p.data.shape:
            raise CheckpointError(
                f"{path}: shape mismatch for {key!r}: "
                f"{arrays[key].shape} vs {p.data.shape}"
            )
        p.data = arrays[key].astype(p.data.dtype).copy()
    for name, buf in model.buffers():
        key = f"buffer.{name}"
        if key not in arrays:
            raise CheckpointError(f"{path}: missing entry {key!r}")
        if arrays[key].shape != buf.shape:
            raise CheckpointError(f"{path}: shape mismatch for {key!r}")
        buf[...] = arrays[key].astype(buf.dtype)
    if adam is not None:
        for name, p in model.parameters():
            for kind, store in (("m", adam.m), ("v", adam.v)):
                key = f"adam.{kind}.{name}"
                if key not in arrays:
                    raise CheckpointError(f"{path}: missing entry {key!r}")
                store[name] = arrays[key].astype(p.data.dtype).copy()
    return Checkpoint(model=model, adam=adam, epoch=manifest["epoch"], seed=manifest["seed"])


def resume_training(
    checkpoint_path: Path | str,
    train_set: list[SamplePair],
    cfg: TrainConfig,
    val_set: list[SamplePair] | None = None,
    out_dir: Path | str | None = None,
    progress: bool = True,
) -> tuple[Model, TrainLog]:
    """Continue a run from an epoch-boundary checkpoint to cfg.epochs."""
    ckpt = load_checkpoint(checkpoint_path)
    if ckpt.adam is None:
        raise CheckpointError(f"{checkpoint_path}: no optimizer state to resume from")
    log = train(
        ckpt.model,
        train_set,
        cfg,
        val_set=val_set,
        out_dir=out_dir,
        adam=ckpt.adam,
        start_epoch=ckpt.epoch,
        progress=progress,
    )
    return ckpt.model, log

"""Command-line entry point: natseg {summary|train|eval|predict|gradcheck|synth-data}.

Configuration precedence is defaults < config file < flags.  Config files
are plain ``key=value`` lines with ``#`` comments; unknown keys are errors.
All randomness flows from --seed.  Exit codes: 0 success, 1 runtime failure
(non-finite loss, gradient-check failure), 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import gradchecks
from .data import (
    SynthConfig,
    generate_synthetic,
    load_image,
    load_split,
    save_mask,
    split,
    write_dataset,
)
from .errors import CheckpointError, ConfigError, DataError, NatsegError, TrainingAborted
from .model import ModelConfig, render_summary_csv, render_summary_text, summarize
from .objectives import metrics_csv, render_metrics_block
from .tensor import Tensor
from .training import (
    TrainConfig,
    evaluate_samples,
    load_checkpoint,
    resume_training,
    train,
)

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2

# preset -> (training source count, loss)
SCENARIO_PRESETS = {
    "mrd100": (100, "bce"),
    "mrd800": (800, "bce"),
    "mrd100iou": (100, "iou"),
    "mrd800iou": (800, "iou"),
}

CONFIG_SCHEMA: dict[str, type] = {
    "variant": str,
    "input_size": int,
    "base_width": int,
    "window": int,
    "seed": int,
    "loss": str,
    "lr": float,
    "batch_size": int,
    "epochs": int,
    "checkpoint_every": int,
    "eval_every": int,
    "data": str,
    "out": str,
    "synth": bool,
    "synth_samples": int,
    "preset": str,
}


def read_config_file(path: Path | str) -> dict:
    """Parse key=value lines, validating every key against the schema."""
    values: dict = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in CONFIG_SCHEMA:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        kind = CONFIG_SCHEMA[key]
        try:
            if kind is bool:
                if value.lower() not in ("true", "false", "1", "0"):
                    raise ValueError(value)
                values[key] = value.lower() in ("true", "1")
            else:
                values[key] = kind(value)
        except ValueError as exc:
            raise ConfigError(
                f"{path}:{lineno}: cannot parse {key}={value!r} as {kind.__name__}"
            ) from exc
    return values


def _merge(defaults: dict, file_values: dict, flags: dict) -> dict:
    merged = dict(defaults)
    merged.update(file_values)
    merged.update({k: v for k, v in flags.items() if v is not None})
    return merged


def _model_config(values: dict) -> ModelConfig:
    size = values["input_size"]
    return ModelConfig(
        variant=values["variant"],
        input_size=(size, size),
        base_width=values["base_width"],
        window=values["window"],
        seed=values["seed"],
    )


# ---------------------------------------------------------------------------
# Commands


def cmd_summary(args: argparse.Namespace) -> int:
    cfg = ModelConfig(
        variant=args.variant,
        input_size=(args.input_size, args.input_size),
        base_width=args.base_width,
        window=args.window,
        seed=args.seed,
    )
    rows = summarize(cfg)
    if args.csv:
        print(render_summary_csv(rows), end="")
    else:
        print(render_summary_text(rows))
    return EXIT_OK


def cmd_synth_data(args: argparse.Namespace) -> int:
    synth = SynthConfig(size=args.size, num_samples=args.samples, seed=args.seed)
    samples = generate_synthetic(synth)
    fractions = tuple(float(f) for f in args.fractions.split(","))
    if len(fractions) != 3:
        raise ConfigError(f"--fractions needs three comma-separated values, got {args.fractions!r}")
    train_s, val_s, test_s = split(samples, fractions, args.seed)
    manifest = write_dataset(args.out, {"train": train_s, "val": val_s, "test": test_s})
    print(f"wrote {len(samples)} samples under {args.out} (manifest: {manifest})")
    return EXIT_OK


def _training_sets(values: dict, train_count: int | None = None):
    """Training/validation sample lists; presets fix the training count."""
    if values.get("synth"):
        count = train_count if train_count is not None else values["synth_samples"]
        val_count = max(2, count // 8) if train_count is not None else 0
        synth = SynthConfig(
            size=values["input_size"],
            num_samples=count + val_count,
            seed=values["seed"],
        )
        samples = generate_synthetic(synth)
        if train_count is not None:
            return samples[:count], samples[count:]
        train_s, val_s, _ = split(samples, (0.8, 0.2, 0.0), values["seed"])
        return train_s, val_s
    if not values.get("data"):
        raise ConfigError("either --data <root> or --synth is required")
    train_s = load_split(values["data"], "train")
    if train_count is not None:
        train_s = train_s[:train_count]
    try:
        val_s = load_split(values["data"], "val")
    except DataError:
        val_s = []
    return train_s, val_s


def cmd_train(args: argparse.Namespace) -> int:
    defaults = {
        "variant": "v2",
        "input_size": 48,
        "base_width": 12,
        "window": 3,
        "seed": 0,
        "loss": "bce",
        "lr": 1e-4,
        "batch_size": 1,
        "epochs": 40,
        "checkpoint_every": 0,
        "eval_every": 1,
        "data": "",
        "out": "runs/latest",
        "synth": False,
        "synth_samples": 16,
        "preset": "",
    }
    file_values = read_config_file(args.config) if args.config else {}
    flags = {
        "variant": args.variant,
        "input_size": args.size,
        "base_width": args.base_width,
        "window": args.window,
        "seed": args.seed,
        "loss": args.loss,
        "lr": args.lr,
        "batch_size": args.batch,
        "epochs": args.epochs,
        "checkpoint_every": args.checkpoint_every,
        "eval_every": args.eval_every,
        "data": args.data,
        "out": args.out,
        "synth": True if args.synth else None,
        "synth_samples": args.synth_samples,
        "preset": args.preset,
    }
    values = _merge(defaults, file_values, flags)

    train_count = None
    if values["preset"]:
        if values["preset"] not in SCENARIO_PRESETS:
            raise ConfigError(
                f"unknown preset {values['preset']!r}; "
                f"choose from {sorted(SCENARIO_PRESETS)}"
            )
        train_count, values["loss"] = SCENARIO_PRESETS[values["preset"]]
    train_s, val_s = _training_sets(values, train_count)

    model_cfg = _model_config(values)
    model_cfg.validate()
    from .model import build_model

    model = build_model(model_cfg)
    train_cfg = TrainConfig(
        loss=values["loss"],
        lr=values["lr"],
        batch_size=values["batch_size"],
        epochs=values["epochs"],
        seed=values["seed"],
        checkpoint_every=values["checkpoint_every"],
        eval_every=values["eval_every"],
    )
    out_dir = Path(values["out"])
    print(
        f"training {model_cfg.variant} on {len(train_s)} samples "
        f"(loss={train_cfg.loss}, lr={train_cfg.lr}, batch={train_cfg.batch_size}, "
        f"epochs={train_cfg.epochs})"
    )
    if args.resume:
        model, log = resume_training(
            args.resume, train_s, train_cfg, val_set=val_s, out_dir=out_dir
        )
    else:
        log = train(model, train_s, train_cfg, val_set=val_s, out_dir=out_dir)
    log.write_csv(out_dir / "training_log.csv")
    print(f"final checkpoint: {log.checkpoint_path}")
    print(f"training log: {out_dir / 'training_log.csv'}")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    samples = load_split(args.data, args.split)
    report = evaluate_samples(
        ckpt.model, samples, threshold=args.threshold, auc_per_image=args.auc_per_image
    )
    print(render_metrics_block(report))
    if args.csv:
        Path(args.csv).write_text(metrics_csv(report))
        print(f"metrics csv: {args.csv}")
    return EXIT_OK


def cmd_predict(args: argparse.Namespace) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    image = load_image(args.image)
    ckpt.model.eval()
    probs = ckpt.model.forward(Tensor(image[None])).data[0]
    save_mask(args.out, probs)
    print(f"mask written: {args.out}")
    if args.probs:
        np.save(args.probs, probs)
        print(f"probability map written: {args.probs}")
    return EXIT_OK


def cmd_gradcheck(args: argparse.Namespace) -> int:
    if args.scope == "ops":
        reports = gradchecks.check_primitives(seed=args.seed)
    else:
        reports = gradchecks.check_model(seed=args.seed, variant=args.variant)
    failed = False
    for name, report in reports:
        status = "PASS" if report.passed else "FAIL"
        print(
            f"{status} {name}: max rel err {report.max_relative_error:.3e} "
            f"(tol {report.tolerance:.1e}, {report.checked} coords, "
            f"{report.excluded} kink-excluded)"
        )
        failed = failed or not report.passed
    return EXIT_RUNTIME if failed else EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="natseg",
        description="Road-segmentation engine: architecture summaries, training, "
        "evaluation, prediction and gradient checks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("summary", help="render the layer-wise architecture table")
    p.add_argument("--variant", default="v1", choices=("v1", "v2", "baseline"))
    p.add_argument("--input-size", type=int, default=384, dest="input_size")
    p.add_argument("--base-width", type=int, default=None, dest="base_width")
    p.add_argument("--window", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--csv", action="store_true")
    p.set_defaults(func=cmd_summary)

    p = sub.add_parser("synth-data", help="generate a synthetic road dataset on disk")
    p.add_argument("--out", required=True)
    p.add_argument("--samples", type=int, default=32)
    p.add_argument("--size", type=int, default=48)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--fractions", default="0.8,0.1,0.1")
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("train", help="train a model on a dataset or synthetic data")
    p.add_argument("--config", default=None, help="key=value config file")
    p.add_argument("--data", default=None, help="dataset root directory")
    p.add_argument("--synth", action="store_true", help="train on generated data")
    p.add_argument("--synth-samples", type=int, default=None, dest="synth_samples")
    p.add_argument("--preset", default=None, choices=sorted(SCENARIO_PRESETS))
    p.add_argument("--variant", default=None, choices=("v1", "v2", "baseline"))
    p.add_argument("--size", type=int, default=None)
    p.add_argument("--base-width", type=int, default=None, dest="base_width")
    p.add_argument("--window", type=int, default=None)
    p.add_argument("--loss", default=None, choices=("bce", "iou"))
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--batch", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--checkpoint-every", type=int, default=None, dest="checkpoint_every")
    p.add_argument("--eval-every", type=int, default=None, dest="eval_every")
    p.add_argument("--out", default=None)
    p.add_argument("--resume", default=None, help="checkpoint to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument(
        "--auc-per-image",
        action="store_true",
        dest="auc_per_image",
        help="average AUC over images instead of pooling all pixels",
    )
    p.add_argument("--csv", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="write a predicted road mask for one image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--probs", default=None, help="also save the raw probability map (.npy)")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("gradcheck", help="finite-difference checks of the gradients")
    p.add_argument("--scope", default="ops", choices=("ops", "model"))
    p.add_argument("--variant", default="v2", choices=("v1", "v2", "baseline"))
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "base_width", None) is None and args.command == "summary":
        args.base_width = 66 if args.variant == "v2" else 64
    try:
        return args.func(args)
    except (ConfigError, DataError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingAborted as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except NatsegError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

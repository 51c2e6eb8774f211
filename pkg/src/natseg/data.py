"""Synthetic road imagery, raster tile ingestion, patching and splitting.

Synthetic samples are textured backgrounds with anti-aliased bright line
segments; the mask rasterizes the same segments hard: a pixel is road iff
its center lies within half the line width of the segment.  Real tiles are
read as 8-bit PNG pairs laid out <root>/{train,val,test}/{sat,map}/<id>.png.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ConfigError, DataError

SPLITS = ("train", "val", "test")
IMAGE_DIR = "sat"
MASK_DIR = "map"


@dataclass
class SamplePair:
    """One aligned image/mask pair; image in [0,1], mask strictly {0,1}."""

    image: np.ndarray  # (3, h, w) float32
    mask: np.ndarray  # (1, h, w) float32 of {0,1}
    id: str

    def __post_init__(self):
        if self.image.ndim != 3 or self.image.shape[0] != 3:
            raise DataError(f"image must be (3,h,w), got {self.image.shape}")
        if self.mask.shape != (1,) + self.image.shape[1:]:
            raise DataError(
                f"mask {self.mask.shape} does not align with image {self.image.shape}"
            )
        values = np.unique(self.mask)
        if not np.isin(values, (0.0, 1.0)).all():
            raise DataError("mask must be strictly binary")


@dataclass
class SynthConfig:
    size: int = 48
    num_samples: int = 16
    line_count: tuple[int, int] = (1, 3)
    line_width: tuple[float, float] = (2.0, 4.0)
    texture_amplitude: float = 0.08
    noise_std: float = 0.02
    seed: int = 0

    def validate(self) -> None:
        if self.size < 8 or self.num_samples < 1:
            raise ConfigError("size >= 8 and num_samples >= 1 required")
        if self.line_count[0] < 1 or self.line_count[0] > self.line_count[1]:
            raise ConfigError(f"bad line_count range {self.line_count}")
        if self.line_width[0] <= 0 or self.line_width[0] > self.line_width[1]:
            raise ConfigError(f"bad line_width range {self.line_width}")


def _segment_distance(
    px: np.ndarray, py: np.ndarray, p0: tuple[float, float], p1: tuple[float, float]
) -> np.ndarray:
    """Distance from pixel centers to the segment p0-p1 (points are (x, y))."""
    dx, dy = p1[0] - p0[0], p1[1] - p0[1]
    length_sq = dx * dx + dy * dy
    if length_sq == 0.0:
        return np.hypot(px - p0[0], py - p0[1])
    t = np.clip(((px - p0[0]) * dx + (py - p0[1]) * dy) / length_sq, 0.0, 1.0)
    return np.hypot(px - (p0[0] + t * dx), py - (p0[1] + t * dy))


def draw_line(
    image: np.ndarray,
    mask: np.ndarray,
    p0: tuple[float, float],
    p1: tuple[float, float],
    width: float,
    intensity: float = 0.85,
) -> None:
    """Rasterize one road segment into image (anti-aliased) and mask (hard).

    Mask rule: pixel center within width/2 of the segment.  A width-2
    horizontal segment along y = r + 0.5 therefore covers exactly rows r
    and r+1.
    """
    h, w = mask.shape[-2:]
    py, px = np.mgrid[0:h, 0:w].astype(np.float64)
    dist = _segment_distance(px, py, p0, p1)
    mask[0][dist <= width / 2.0] = 1.0
    coverage = np.clip(width / 2.0 + 0.5 - dist, 0.0, 1.0).astype(image.dtype)
    image *= 1.0 - coverage
    image += coverage * intensity


def _smooth_field(rng: np.random.Generator, size: int, cells: int = 6) -> np.ndarray:
    """Low-frequency texture: a coarse random grid, bilinearly upsampled."""
    coarse = rng.standard_normal((cells + 1, cells + 1))
    pos = np.linspace(0.0, cells, size)
    i0 = np.floor(pos).astype(int).clip(0, cells - 1)
    frac = pos - i0
    rows = (
        coarse[i0][:, i0] * np.outer(1 - frac, 1 - frac)
        + coarse[i0][:, i0 + 1] * np.outer(1 - frac, frac)
        + coarse[i0 + 1][:, i0] * np.outer(frac, 1 - frac)
        + coarse[i0 + 1][:, i0 + 1] * np.outer(frac, frac)
    )
    return rows


def generate_synthetic(cfg: SynthConfig) -> list[SamplePair]:
    """Deterministic per seed; every mask fraction lands in (0, 0.5)."""
    cfg.validate()
    samples = []
    for index in range(cfg.num_samples):
        rng = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence([cfg.seed, index]))
        )
        for _ in range(32):  # reroll geometry until the mask fraction fits
            image, mask = _render_sample(rng, cfg)
            fraction = mask.mean()
            if 0.0 < fraction < 0.5:
                break
        else:
            raise ConfigError(
                "could not generate a mask with fraction in (0, 0.5); "
                "check line_count/line_width against the image size"
            )
        samples.append(SamplePair(image=image, mask=mask, id=f"synth{index:05d}"))
    return samples


def _render_sample(
    rng: np.random.Generator, cfg: SynthConfig
) -> tuple[np.ndarray, np.ndarray]:
    size = cfg.size
    base = 0.22 + 0.10 * rng.random()
    gray = base + cfg.texture_amplitude * _smooth_field(rng, size)
    gray = gray.astype(np.float32)
    mask = np.zeros((1, size, size), dtype=np.float32)
    n_lines = int(rng.integers(cfg.line_count[0], cfg.line_count[1] + 1))
    for _ in range(n_lines):
        # endpoints on opposite-ish borders so segments span the tile
        p0 = (float(rng.uniform(-2, size + 1)), float(rng.uniform(-2, size + 1)))
        angle = rng.uniform(0, 2 * np.pi)
        reach = size * 2.0
        p1 = (p0[0] + reach * np.cos(angle), p0[1] + reach * np.sin(angle))
        width = float(rng.uniform(*cfg.line_width))
        intensity = float(rng.uniform(0.75, 0.95))
        draw_line(gray[None], mask, p0, p1, width, intensity)
    tint = 1.0 + 0.05 * rng.standard_normal(3).astype(np.float32)
    image = np.clip(gray[None] * tint[:, None, None], 0.0, 1.0)
    if cfg.noise_std > 0:
        image = image + cfg.noise_std * rng.standard_normal(image.shape)
    return np.clip(image, 0.0, 1.0).astype(np.float32), mask


# ---------------------------------------------------------------------------
# Raster ingestion and export


def load_image(path: Path | str) -> np.ndarray:
    """Read an 8-bit raster as (3, h, w) float32 in [0,1]."""
    try:
        with Image.open(path) as img:
            arr = np.asarray(img.convert("RGB"))
    except OSError as exc:
        raise DataError(f"cannot decode image {path}: {exc}") from exc
    return (arr.astype(np.float32) / 255.0).transpose(2, 0, 1)


def load_tile_pair(image_path: Path | str, mask_path: Path | str) -> SamplePair:
    """Image normalized by /255; mask binarized at >127 (any nonzero band)."""
    try:
        with Image.open(image_path) as img:
            image_arr = np.asarray(img.convert("RGB"))
    except OSError as exc:
        raise DataError(f"cannot decode image {image_path}: {exc}") from exc
    try:
        with Image.open(mask_path) as msk:
            mask_raw = np.asarray(msk)
    except OSError as exc:
        raise DataError(f"cannot decode mask {mask_path}: {exc}") from exc

    if mask_raw.ndim == 3:
        mask_raw = mask_raw.max(axis=-1)
    elif mask_raw.ndim != 2:
        raise DataError(
            f"mask {mask_path} has unexpected {mask_raw.ndim}-d layout"
        )
    if image_arr.shape[:2] != mask_raw.shape:
        raise DataError(
            f"size mismatch: image {image_path} is {image_arr.shape[:2]}, "
            f"mask {mask_path} is {mask_raw.shape}"
        )
    image = (image_arr.astype(np.float32) / 255.0).transpose(2, 0, 1)
    mask = (mask_raw > 127).astype(np.float32)[None]
    return SamplePair(image=image, mask=mask, id=Path(image_path).stem)


def save_mask(path: Path | str, mask: np.ndarray) -> None:
    """Write a {0,1} (or probability, thresholded at 0.5) map as {0,255} PNG."""
    arr = np.asarray(mask)
    if arr.ndim == 3:
        arr = arr[0]
    out = ((arr >= 0.5) * 255).astype(np.uint8)
    Image.fromarray(out, mode="L").save(path)


def save_image(path: Path | str, image: np.ndarray) -> None:
    arr = np.asarray(image)
    if arr.ndim == 3 and arr.shape[0] == 3:
        arr = arr.transpose(1, 2, 0)
    out = np.clip(arr * 255.0, 0, 255).astype(np.uint8)
    Image.fromarray(out).save(path)


# ---------------------------------------------------------------------------
# Patching and splits


def _grid_starts(source: int, patch: int, stride: int) -> list[int]:
    starts = list(range(0, source - patch + 1, stride))
    if starts[-1] != source - patch:
        starts.append(source - patch)  # shift the last patch inward to the border
    return starts


def extract_patches(pair: SamplePair, patch_size: int, stride: int) -> list[SamplePair]:
    """Regular grid; the final row/column is shifted inward to cover borders."""
    h, w = pair.image.shape[1:]
    if patch_size > min(h, w):
        raise ConfigError(f"patch_size {patch_size} exceeds source {h}x{w}")
    if stride < 1:
        raise ConfigError("stride must be >= 1")
    patches = []
    for oy in _grid_starts(h, patch_size, stride):
        for ox in _grid_starts(w, patch_size, stride):
            patches.append(
                SamplePair(
                    image=pair.image[:, oy : oy + patch_size, ox : ox + patch_size].copy(),
                    mask=pair.mask[:, oy : oy + patch_size, ox : ox + patch_size].copy(),
                    id=f"{pair.id}+{oy}+{ox}",
                )
            )
    return patches


def split(
    samples: list[SamplePair], fractions: tuple[float, float, float], seed: int
) -> tuple[list[SamplePair], list[SamplePair], list[SamplePair]]:
    """Deterministic disjoint partition at source level.

    Counts are floored per split; the remainder goes to train.
    """
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError(f"fractions must sum to 1, got {fractions}")
    ordered = sorted(samples, key=lambda s: s.id)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    perm = rng.permutation(len(ordered))
    n = len(ordered)
    n_val = int(n * fractions[1])
    n_test = int(n * fractions[2])
    n_train = n - n_val - n_test
    shuffled = [ordered[i] for i in perm]
    return (
        shuffled[:n_train],
        shuffled[n_train : n_train + n_val],
        shuffled[n_train + n_val :],
    )


# ---------------------------------------------------------------------------
# Dataset directory layout


def write_dataset(
    root: Path | str,
    splits: dict[str, list[SamplePair]],
) -> Path:
    """Write <root>/{split}/{sat,map}/<id>.png plus a manifest CSV."""
    root = Path(root)
    rows = []
    for split_name in SPLITS:
        for sample in splits.get(split_name, []):
            img_dir = root / split_name / IMAGE_DIR
            mask_dir = root / split_name / MASK_DIR
            img_dir.mkdir(parents=True, exist_ok=True)
            mask_dir.mkdir(parents=True, exist_ok=True)
            img_path = img_dir / f"{sample.id}.png"
            mask_path = mask_dir / f"{sample.id}.png"
            save_image(img_path, sample.image)
            save_mask(mask_path, sample.mask)
            rows.append((sample.id, split_name, str(img_path), str(mask_path)))
    manifest = root / "manifest.csv"
    with open(manifest, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["id", "split", "path_image", "path_mask"])
        writer.writerows(rows)
    return manifest


def load_split(root: Path | str, split_name: str) -> list[SamplePair]:
    """Read every image/mask pair of one split, ordered by id."""
    if split_name not in SPLITS:
        raise ConfigError(f"split must be one of {SPLITS}, got {split_name!r}")
    root = Path(root)
    img_dir = root / split_name / IMAGE_DIR
    mask_dir = root / split_name / MASK_DIR
    if not img_dir.is_dir():
        raise DataError(f"missing image directory {img_dir}")
    pairs = []
    for img_path in sorted(img_dir.iterdir()):
        if not img_path.is_file():
            continue
        mask_path = mask_dir / img_path.name
        if not mask_path.exists():
            raise DataError(f"no mask for {img_path} (expected {mask_path})")
        pairs.append(load_tile_pair(img_path, mask_path))
    if not pairs:
        raise DataError(f"no samples under {img_dir}")
    return pairs

"""Deterministic synthetic digit images for desk-scale experiments.

Renders a 5x7 pixel digit font into 28x28 grayscale images with random
scale, offset, rotation, stroke intensity and light noise, all drawn from
a seeded generator.  Also builds outlier sets (uniform noise, shuffled
digit pixels, rectangle clutter) for outlier-exposure training.  Serves as
the offline stand-in for the usual digit benchmark; same shapes, same IDX
files, same [0, 1]/255 convention.

Run `python -m oodfuzz.synth --out-dir data` to write IDX files.
"""

from __future__ import annotations

import argparse
import json
from pathlib import Path

import numpy as np

from .model_io import Dataset, canonical_json, save_dataset
from .mutation import apply_rotate

GLYPHS = {
    0: ("01110", "10001", "10011", "10101", "11001", "10001", "01110"),
    1: ("00100", "01100", "00100", "00100", "00100", "00100", "01110"),
    2: ("01110", "10001", "00001", "00010", "00100", "01000", "11111"),
    3: ("11111", "00010", "00100", "00010", "00001", "10001", "01110"),
    4: ("00010", "00110", "01010", "10010", "11111", "00010", "00010"),
    5: ("11111", "10000", "11110", "00001", "00001", "10001", "01110"),
    6: ("00110", "01000", "10000", "11110", "10001", "10001", "01110"),
    7: ("11111", "00001", "00010", "00100", "01000", "01000", "01000"),
    8: ("01110", "10001", "10001", "01110", "10001", "10001", "01110"),
    9: ("01110", "10001", "10001", "01111", "00001", "00010", "01100"),
}

SIZE = 28


def _glyph_array(digit: int) -> np.ndarray:
    rows = GLYPHS[digit]
    return np.array([[c == "1" for c in row] for row in rows], dtype=np.float32)


def _resize_nearest(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    h, w = img.shape
    rows = (np.arange(out_h) * h // out_h).clip(0, h - 1)
    cols = (np.arange(out_w) * w // out_w).clip(0, w - 1)
    return img[np.ix_(rows, cols)]


def _stamp_glyph(digit, rng, scale_range, offset_max, intensity_range, pixel_keep):
    glyph = _glyph_array(digit)
    if pixel_keep < 1.0:
        glyph = glyph * (rng.uniform(size=glyph.shape) < pixel_keep)
    s = rng.uniform(*scale_range)
    gh, gw = max(1, round(7 * s)), max(1, round(5 * s))
    stamp = _resize_nearest(glyph, gh, gw) * rng.uniform(*intensity_range)
    canvas = np.zeros((SIZE, SIZE), dtype=np.float32)
    top = (SIZE - gh) // 2 + int(rng.integers(-offset_max, offset_max + 1))
    left = (SIZE - gw) // 2 + int(rng.integers(-offset_max, offset_max + 1))
    top = int(np.clip(top, 0, SIZE - gh))
    left = int(np.clip(left, 0, SIZE - gw))
    canvas[top : top + gh, left : left + gw] = stamp
    return canvas


def render_digit(
    digit: int,
    rng: np.random.Generator,
    rotation_max: float = 14.0,
    scale_range: tuple[float, float] = (1.7, 2.8),
    offset_max: int = 3,
    intensity_range: tuple[float, float] = (0.7, 1.0),
    noise_sigma: float = 0.03,
    pixel_keep: float = 0.96,
    ghost: int | None = None,
    ghost_intensity: float = 0.0,
) -> np.ndarray:
    """One 28x28x1 float image in [0, 1].

    Jitter defaults are deliberately aggressive: the rendered task should
    leave a trained classifier with a few percent of genuine confusions,
    not a saturated 100%.  A `ghost` digit overlays a second fainter glyph,
    producing ambiguous images labeled by the dominant one, the stand-in
    for a natural dataset's hard examples.
    """
    canvas = _stamp_glyph(digit, rng, scale_range, offset_max, intensity_range, pixel_keep)
    if ghost is not None and ghost_intensity > 0:
        ghost_canvas = _stamp_glyph(
            ghost, rng, scale_range, offset_max, intensity_range, pixel_keep
        )
        canvas = np.maximum(canvas, ghost_canvas * np.float32(ghost_intensity))

    image = canvas[:, :, None]
    if rotation_max > 0:
        image = apply_rotate(image, float(rng.uniform(-rotation_max, rotation_max)))
    if noise_sigma > 0:
        image = image + rng.normal(0.0, noise_sigma, size=image.shape).astype(np.float32)
    return np.clip(image, 0.0, 1.0)


def _quantize(image: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(image * 255.0), 0, 255).astype(np.uint8)


HARD_POSE = dict(
    rotation_max=24.0,
    scale_range=(1.45, 1.9),
    intensity_range=(0.45, 0.7),
    noise_sigma=0.06,
    pixel_keep=0.82,
)


def make_digit_dataset(
    n: int,
    rng_seed: int = 0,
    name: str = "synth-digits",
    ambiguous_fraction: float = 0.0,
    ghost_intensity_range: tuple[float, float] = (0.45, 0.75),
    hard_fraction: float = 0.08,
    hard_kwargs: dict | None = None,
    **render_kwargs,
) -> Dataset:
    """Digit dataset with optional hard-pose and ghost-blended slices.

    The hard-pose slice (legible digits at extreme jitter, true labels)
    keeps the trained model's confidence distribution from collapsing, the
    way a natural dataset's hard examples do.  Ghost blends add genuinely
    ambiguous images labeled by the dominant glyph.
    """
    rng = np.random.default_rng(rng_seed)
    labels = rng.integers(0, 10, size=n).astype(np.int64)
    hard = dict(HARD_POSE) if hard_kwargs is None else dict(hard_kwargs)
    images = []
    for d in labels:
        u = rng.uniform()
        if u < ambiguous_fraction:
            ghost = int((d + rng.integers(1, 10)) % 10)
            intensity = float(rng.uniform(*ghost_intensity_range))
            images.append(
                _quantize(
                    render_digit(
                        int(d), rng, ghost=ghost, ghost_intensity=intensity, **render_kwargs
                    )
                )
            )
        elif u < ambiguous_fraction + hard_fraction:
            images.append(_quantize(render_digit(int(d), rng, **hard)))
        else:
            images.append(_quantize(render_digit(int(d), rng, **render_kwargs)))
    return Dataset(np.stack(images), labels, name)


def _clutter(rng: np.random.Generator) -> np.ndarray:
    canvas = np.full((SIZE, SIZE, 1), rng.uniform(0.0, 0.2), dtype=np.float32)
    for _ in range(int(rng.integers(2, 7))):
        h = int(rng.integers(2, 12))
        w = int(rng.integers(2, 12))
        top = int(rng.integers(0, SIZE - h))
        left = int(rng.integers(0, SIZE - w))
        canvas[top : top + h, left : left + w, 0] = rng.uniform(0.3, 1.0)
    return np.clip(canvas, 0.0, 1.0)


OUTLIER_KINDS = ("uniform", "shuffle")


def make_outlier_dataset(
    n: int, rng_seed: int = 0, name: str = "synth-outliers", kinds: tuple[str, ...] = OUTLIER_KINDS
) -> Dataset:
    """Label-free outlier images cycled over the requested kinds."""
    rng = np.random.default_rng(rng_seed)
    images = []
    for i in range(n):
        kind = kinds[i % len(kinds)]
        if kind == "uniform":
            img = rng.uniform(0.0, 1.0, size=(SIZE, SIZE, 1)).astype(np.float32)
        elif kind == "shuffle":
            digit = render_digit(int(rng.integers(0, 10)), rng)
            flat = digit.ravel()
            img = rng.permutation(flat).reshape(SIZE, SIZE, 1)
        else:
            img = _clutter(rng)
        images.append(_quantize(img))
    labels = np.zeros(n, dtype=np.int64)  # ignored by OE training
    return Dataset(np.stack(images), labels, name)


def write_standard_layout(
    out_dir,
    train_n: int = 10_000,
    test_n: int = 2_000,
    outlier_n: int = 2_000,
    rng_seed: int = 0,
) -> dict:
    """Write train/test/outlier IDX pairs plus a manifest; returns the manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    splits = {
        "train": make_digit_dataset(train_n, rng_seed=rng_seed),
        "test": make_digit_dataset(test_n, rng_seed=rng_seed + 1),
        "outlier": make_outlier_dataset(outlier_n, rng_seed=rng_seed + 2),
    }
    manifest = {"rng_seed": rng_seed, "splits": {}}
    for split, ds in splits.items():
        images_path = out_dir / f"{split}-images.idx"
        labels_path = out_dir / f"{split}-labels.idx"
        save_dataset(ds, images_path, labels_path)
        manifest["splits"][split] = {
            "count": len(ds),
            "images": images_path.name,
            "labels": labels_path.name,
        }
    (out_dir / "manifest.json").write_text(canonical_json(manifest) + "\n", encoding="utf-8")
    return manifest


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description="generate synthetic digit IDX datasets")
    parser.add_argument("--out-dir", required=True)
    parser.add_argument("--train", type=int, default=10_000)
    parser.add_argument("--test", type=int, default=2_000)
    parser.add_argument("--outliers", type=int, default=2_000)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)
    manifest = write_standard_layout(args.out_dir, args.train, args.test, args.outliers, args.seed)
    print(json.dumps(manifest, indent=2))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())

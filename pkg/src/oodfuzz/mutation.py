"""The eight data mutation operators and their validity constraints.

Affine operators (translate, rotate, scale, shear) use inverse-mapped
nearest-neighbor resampling about the image center with zero padding at
the borders, so results are integer-exact and platform-reproducible.
Pixel-value operators (brightness, contrast, blur, noise) act on
intensities and clamp to [0, 1].

Chains carry at most one affine operator (label-preservation heuristic);
pixel-value operators stack freely but are subject to check_validity
against the affine-adjusted original.  Every operator is deterministic
given (operator, params, rng_seed), which makes recorded chains replayable
bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import MutationParamError, ShapeError

AFFINE_OPS = ("translate", "rotate", "scale", "shear")
PIXEL_OPS = ("brightness", "contrast", "blur", "noise")
OPERATORS = AFFINE_OPS + PIXEL_OPS

# Legal parameter ranges; sampling ranges may be narrower (noise is sampled
# from [0.01, 0.08] but sigma 0 stays legal as the identity point).
TRANSLATE_MAX = 3
ROTATE_MAX_DEG = 15.0
SCALE_RANGE = (0.8, 1.2)
SHEAR_MAX = 0.15
BRIGHTNESS_MAX = 0.3
CONTRAST_RANGE = (0.7, 1.3)
BLUR_SIGMA_RANGE = (0.5, 1.0)
BLUR_KERNEL_SIZES = (1, 3)
NOISE_SIGMA_MAX = 0.08
NOISE_SIGMA_SAMPLE_MIN = 0.01

VALIDITY_L0_MAX = 0.5
VALIDITY_LINF_MAX = 0.2


@dataclass(frozen=True)
class MutationSpec:
    operator: str
    params: dict = field(default_factory=dict)
    rng_seed: int = 0


def validate_spec(spec: MutationSpec) -> None:
    """Raise MutationParamError unless the given MutationSpec is inside the legal ranges."""
    op = spec.operator
    p = spec.params
    if op == "translate":
        dx, dy = p.get("dx"), p.get("dy")
        for name, v in (("dx", dx), ("dy", dy)):
            if not isinstance(v, (int, np.integer)) or abs(v) > TRANSLATE_MAX:
                raise MutationParamError(
                    f"translate {name}={v!r} outside integer range +-{TRANSLATE_MAX}"
                )
    elif op == "rotate":
        deg = p.get("degrees")
        if deg is None or abs(deg) > ROTATE_MAX_DEG:
            raise MutationParamError(f"rotate degrees={deg!r} outside +-{ROTATE_MAX_DEG}")
    elif op == "scale":
        f = p.get("factor")
        if f is None or not SCALE_RANGE[0] <= f <= SCALE_RANGE[1]:
            raise MutationParamError(f"scale factor={f!r} outside {SCALE_RANGE}")
    elif op == "shear":
        f = p.get("factor")
        if f is None or abs(f) > SHEAR_MAX:
            raise MutationParamError(f"shear factor={f!r} outside +-{SHEAR_MAX}")
    elif op == "brightness":
        d = p.get("delta")
        if d is None or abs(d) > BRIGHTNESS_MAX:
            raise MutationParamError(f"brightness delta={d!r} outside +-{BRIGHTNESS_MAX}")
    elif op == "contrast":
        f = p.get("factor")
        if f is None or not CONTRAST_RANGE[0] <= f <= CONTRAST_RANGE[1]:
            raise MutationParamError(f"contrast factor={f!r} outside {CONTRAST_RANGE}")
    elif op == "blur":
        size = p.get("kernel_size")
        sigma = p.get("sigma")
        if size not in BLUR_KERNEL_SIZES:
            raise MutationParamError(f"blur kernel_size={size!r} not in {BLUR_KERNEL_SIZES}")
        if sigma is None or not BLUR_SIGMA_RANGE[0] <= sigma <= BLUR_SIGMA_RANGE[1]:
            raise MutationParamError(f"blur sigma={sigma!r} outside {BLUR_SIGMA_RANGE}")
    elif op == "noise":
        sigma = p.get("sigma")
        if sigma is None or not 0.0 <= sigma <= NOISE_SIGMA_MAX:
            raise MutationParamError(f"noise sigma={sigma!r} outside [0, {NOISE_SIGMA_MAX}]")
    else:
        raise MutationParamError(f"unknown operator {op!r}")


# ---------------------------------------------------------------------------
# raw operators (no range validation; mutate() validates)


def _nearest_resample(image: np.ndarray, src_x: np.ndarray, src_y: np.ndarray) -> np.ndarray:
    """Gather pixels at rounded (src_x, src_y); out-of-bounds become zero."""
    h, w = image.shape[:2]
    xi = np.rint(src_x).astype(np.int64)
    yi = np.rint(src_y).astype(np.int64)
    valid = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
    out = np.zeros_like(image)
    rows, cols = np.nonzero(valid)
    out[rows, cols] = image[yi[valid], xi[valid]]
    return out


def _dest_grid(image: np.ndarray):
    h, w = image.shape[:2]
    ys, xs = np.mgrid[0:h, 0:w]
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    return xs.astype(np.float64), ys.astype(np.float64), cx, cy


def apply_translate(image: np.ndarray, dx: int, dy: int) -> np.ndarray:
    """Integer pixel shift, positive dx rightward and dy downward."""
    h, w = image.shape[:2]
    out = np.zeros_like(image)
    sx0, sx1 = max(0, -dx), min(w, w - dx)
    sy0, sy1 = max(0, -dy), min(h, h - dy)
    if sx0 < sx1 and sy0 < sy1:
        out[sy0 + dy : sy1 + dy, sx0 + dx : sx1 + dx] = image[sy0:sy1, sx0:sx1]
    return out


def apply_rotate(image: np.ndarray, degrees: float) -> np.ndarray:
    xs, ys, cx, cy = _dest_grid(image)
    t = math.radians(degrees)
    cos_t, sin_t = math.cos(t), math.sin(t)
    rx, ry = xs - cx, ys - cy
    return _nearest_resample(image, cos_t * rx + sin_t * ry + cx, -sin_t * rx + cos_t * ry + cy)


def apply_scale(image: np.ndarray, factor: float) -> np.ndarray:
    xs, ys, cx, cy = _dest_grid(image)
    return _nearest_resample(image, (xs - cx) / factor + cx, (ys - cy) / factor + cy)


def apply_shear(image: np.ndarray, factor: float) -> np.ndarray:
    xs, ys, cx, cy = _dest_grid(image)
    return _nearest_resample(image, xs - factor * (ys - cy), ys)


def apply_brightness(image: np.ndarray, delta: float) -> np.ndarray:
    return np.clip(image + np.float32(delta), 0.0, 1.0)


def apply_contrast(image: np.ndarray, factor: float) -> np.ndarray:
    if factor == 1.0:
        return image.copy()
    return np.clip(np.float32(0.5) + np.float32(factor) * (image - np.float32(0.5)), 0.0, 1.0)


def apply_blur(image: np.ndarray, sigma: float, kernel_size: int = 3) -> np.ndarray:
    if kernel_size == 1:
        return image.copy()
    offsets = (-1.0, 0.0, 1.0)
    kernel = np.array(
        [[math.exp(-(di * di + dj * dj) / (2.0 * sigma * sigma)) for dj in offsets] for di in offsets],
        dtype=np.float64,
    )
    kernel = (kernel / kernel.sum()).astype(np.float32)
    h, w = image.shape[:2]
    padded = np.pad(image, ((1, 1), (1, 1), (0, 0)), mode="edge")
    out = np.zeros_like(image)
    for i in range(3):
        for j in range(3):
            out += kernel[i, j] * padded[i : i + h, j : j + w]
    return np.clip(out, 0.0, 1.0)


def apply_noise(image: np.ndarray, sigma: float, rng_seed: int) -> np.ndarray:
    rng = np.random.Generator(np.random.PCG64(rng_seed))
    noise = rng.normal(0.0, sigma, size=image.shape).astype(np.float32)
    return np.clip(image + noise, 0.0, 1.0)


def mutate(image: np.ndarray, spec: MutationSpec) -> np.ndarray:
    """Apply one validated operator; output has the same shape, in [0, 1]."""
    if image.ndim != 3:
        raise ShapeError(f"mutation expects an HxWxC image, got shape {image.shape}")
    validate_spec(spec)
    image = np.asarray(image, dtype=np.float32)
    op, p = spec.operator, spec.params
    if op == "translate":
        return apply_translate(image, int(p["dx"]), int(p["dy"]))
    if op == "rotate":
        return apply_rotate(image, float(p["degrees"]))
    if op == "scale":
        return apply_scale(image, float(p["factor"]))
    if op == "shear":
        return apply_shear(image, float(p["factor"]))
    if op == "brightness":
        return apply_brightness(image, float(p["delta"]))
    if op == "contrast":
        return apply_contrast(image, float(p["factor"]))
    if op == "blur":
        return apply_blur(image, float(p["sigma"]), int(p["kernel_size"]))
    return apply_noise(image, float(p["sigma"]), spec.rng_seed)


def sample_spec(rng: np.random.Generator, allow_affine: bool = True) -> MutationSpec:
    """Uniform operator choice, then uniform parameters within sampling ranges."""
    ops = OPERATORS if allow_affine else PIXEL_OPS
    op = ops[int(rng.integers(0, len(ops)))]
    seed = int(rng.integers(0, 2**63))
    if op == "translate":
        params = {
            "dx": int(rng.integers(-TRANSLATE_MAX, TRANSLATE_MAX + 1)),
            "dy": int(rng.integers(-TRANSLATE_MAX, TRANSLATE_MAX + 1)),
        }
    elif op == "rotate":
        params = {"degrees": float(rng.uniform(-ROTATE_MAX_DEG, ROTATE_MAX_DEG))}
    elif op == "scale":
        params = {"factor": float(rng.uniform(*SCALE_RANGE))}
    elif op == "shear":
        params = {"factor": float(rng.uniform(-SHEAR_MAX, SHEAR_MAX))}
    elif op == "brightness":
        params = {"delta": float(rng.uniform(-BRIGHTNESS_MAX, BRIGHTNESS_MAX))}
    elif op == "contrast":
        params = {"factor": float(rng.uniform(*CONTRAST_RANGE))}
    elif op == "blur":
        params = {"kernel_size": 3, "sigma": float(rng.uniform(*BLUR_SIGMA_RANGE))}
    else:
        params = {"sigma": float(rng.uniform(NOISE_SIGMA_SAMPLE_MIN, NOISE_SIGMA_MAX))}
    return MutationSpec(operator=op, params=params, rng_seed=seed)


def check_validity(original: np.ndarray, mutated: np.ndarray) -> bool:
    """Accept if few pixels changed (L0 <= 0.5) or changes are small (Linf <= 0.2).

    Meant for pixel-value operators; affine results pass by construction
    and are not checked.
    """
    if original.shape != mutated.shape:
        raise ShapeError(f"shape mismatch {original.shape} vs {mutated.shape}")
    diff = np.abs(mutated.astype(np.float32) - original.astype(np.float32))
    changed = np.any(diff > 0, axis=-1)
    l0_fraction = float(changed.mean())
    linf = float(diff.max()) if diff.size else 0.0
    return l0_fraction <= VALIDITY_L0_MAX or linf <= VALIDITY_LINF_MAX


def chain_has_affine(chain) -> bool:
    return any(spec.operator in AFFINE_OPS for spec in chain)


def apply_chain(image: np.ndarray, chain) -> np.ndarray:
    out = np.asarray(image, dtype=np.float32)
    for spec in chain:
        out = mutate(out, spec)
    return out


def apply_chain_with_reference(image: np.ndarray, chain) -> tuple[np.ndarray, np.ndarray]:
    """Replay a chain, also tracking the affine-only reference image.

    The reference is the original with just the chain's affine operators
    applied; validity of further pixel-value mutations is measured against
    it, so accumulated pixel distortion is bounded relative to the
    geometry-adjusted original.
    """
    out = np.asarray(image, dtype=np.float32)
    ref = out
    for spec in chain:
        out = mutate(out, spec)
        if spec.operator in AFFINE_OPS:
            ref = mutate(ref, spec)
    return out, ref


def chain_to_obj(chain) -> list[dict]:
    return [
        {"op": spec.operator, "params": dict(spec.params), "rng_seed": spec.rng_seed}
        for spec in chain
    ]


def obj_to_chain(obj) -> tuple[MutationSpec, ...]:
    return tuple(
        MutationSpec(operator=o["op"], params=dict(o["params"]), rng_seed=int(o["rng_seed"]))
        for o in obj
    )

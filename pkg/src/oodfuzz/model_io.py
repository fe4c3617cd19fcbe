"""Model and dataset file formats.

Models are single JSON documents: header fields (format_version,
input_shape, class_count) plus a layers array.  Dense weights are stored
row-major over output units (weights[out][in]); conv2d weights as nested
[out_channel][in_channel][row][col] arrays.  Pixels are stored as unsigned
bytes in IDX files and normalized to [0, 1] (divide by 255) only at the
runtime boundary.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DatasetFormatError, ModelFormatError
from .runtime import Conv2d, Dense, Flatten, MaxPool2x2, Network, Relu

FORMAT_VERSION = 1

IDX_UBYTE = 0x08


def canonical_json(obj) -> str:
    """Deterministic JSON encoding used for files and fingerprints."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def json_fingerprint(obj) -> str:
    return sha256_hex(canonical_json(obj).encode("utf-8"))


# ---------------------------------------------------------------------------
# model JSON


def _layer_to_obj(layer) -> dict:
    if isinstance(layer, Dense):
        out_n, in_n = layer.weights.shape
        return {
            "kind": "dense",
            "in": int(in_n),
            "out": int(out_n),
            "weights": [[float(v) for v in row] for row in layer.weights],
            "bias": [float(v) for v in layer.bias],
        }
    if isinstance(layer, Conv2d):
        out_c, in_c, k, _ = layer.weights.shape
        return {
            "kind": "conv2d",
            "in_channels": int(in_c),
            "out_channels": int(out_c),
            "kernel": int(k),
            "stride": int(layer.stride),
            "weights": [
                [[[float(v) for v in row] for row in ch] for ch in out]
                for out in layer.weights
            ],
            "bias": [float(v) for v in layer.bias],
        }
    return {"kind": layer.kind}


def _obj_to_layer(obj: dict, index: int):
    kind = obj.get("kind")
    if kind == "dense":
        weights = np.asarray(obj["weights"], dtype=np.float32)
        bias = np.asarray(obj["bias"], dtype=np.float32)
        if weights.ndim != 2 or weights.shape != (obj["out"], obj["in"]):
            raise ModelFormatError(
                f"layer {index} (dense) weights shape {weights.shape} does not match "
                f"declared out={obj.get('out')}, in={obj.get('in')}"
            )
        return Dense(weights, bias)
    if kind == "conv2d":
        weights = np.asarray(obj["weights"], dtype=np.float32)
        bias = np.asarray(obj["bias"], dtype=np.float32)
        expected = (obj["out_channels"], obj["in_channels"], obj["kernel"], obj["kernel"])
        if weights.shape != expected:
            raise ModelFormatError(
                f"layer {index} (conv2d) weights shape {weights.shape} does not match "
                f"declared {expected}"
            )
        return Conv2d(weights, bias, int(obj.get("stride", 1)))
    if kind == "relu":
        return Relu()
    if kind == "maxpool2x2":
        return MaxPool2x2()
    if kind == "flatten":
        return Flatten()
    raise ModelFormatError(f"layer {index} has unknown kind {kind!r}")


def model_to_obj(net: Network) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "input_shape": list(net.input_shape),
        "class_count": net.class_count,
        "layers": [_layer_to_obj(layer) for layer in net.layers],
    }


def obj_to_model(obj: dict) -> Network:
    if not isinstance(obj, dict):
        raise ModelFormatError("model document is not a JSON object")
    version = obj.get("format_version")
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported format_version {version!r}")
    for key in ("input_shape", "class_count", "layers"):
        if key not in obj:
            raise ModelFormatError(f"model document missing {key!r}")
    layers = [_obj_to_layer(o, i) for i, o in enumerate(obj["layers"])]
    return Network(layers, tuple(obj["input_shape"]), int(obj["class_count"]))


def save_model(net: Network, path) -> None:
    Path(path).write_text(canonical_json(model_to_obj(net)) + "\n", encoding="utf-8")


def load_model(path) -> Network:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ModelFormatError(f"cannot read model file {path}: {exc}") from exc
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"model file {path} is not valid JSON: {exc}") from exc
    return obj_to_model(obj)


def model_fingerprint(net: Network) -> str:
    return json_fingerprint(model_to_obj(net))


# ---------------------------------------------------------------------------
# IDX datasets


@dataclass
class Dataset:
    """Unsigned-byte images and integer labels."""

    images: np.ndarray  # (N, H, W, C) uint8
    labels: np.ndarray  # (N,)
    name: str = ""

    def __post_init__(self):
        self.images = np.asarray(self.images)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.dtype != np.uint8:
            raise DatasetFormatError(f"images must be uint8, got {self.images.dtype}")
        if self.images.ndim != 4:
            raise DatasetFormatError(f"images must be NxHxWxC, got shape {self.images.shape}")
        if self.labels.ndim != 1 or len(self.labels) != len(self.images):
            raise DatasetFormatError(
                f"have {len(self.images)} images but {len(self.labels)} labels"
            )

    def __len__(self) -> int:
        return len(self.images)

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return tuple(self.images.shape[1:])

    def to_float(self) -> np.ndarray:
        """Images normalized to [0, 1] float32."""
        return self.images.astype(np.float32) / np.float32(255.0)

    def image_float(self, index: int) -> np.ndarray:
        return self.images[index].astype(np.float32) / np.float32(255.0)

    def subset(self, indices) -> "Dataset":
        indices = np.asarray(indices)
        return Dataset(self.images[indices], self.labels[indices], self.name)


def read_idx(path) -> np.ndarray:
    """Read an IDX file of unsigned bytes (any dimensionality)."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise DatasetFormatError(f"cannot read IDX file {path}: {exc}") from exc
    if len(raw) < 4:
        raise DatasetFormatError(f"{path}: shorter than an IDX header")
    zero0, zero1, dtype, ndim = struct.unpack(">BBBB", raw[:4])
    if zero0 != 0 or zero1 != 0:
        raise DatasetFormatError(f"{path}: bad magic number {raw[:4].hex()}")
    if dtype != IDX_UBYTE:
        raise DatasetFormatError(f"{path}: unsupported IDX type byte 0x{dtype:02x}")
    header_len = 4 + 4 * ndim
    if len(raw) < header_len:
        raise DatasetFormatError(f"{path}: truncated IDX dimension header")
    dims = struct.unpack(f">{ndim}I", raw[4:header_len])
    count = int(np.prod(dims)) if dims else 0
    payload = raw[header_len:]
    if len(payload) < count:
        raise DatasetFormatError(
            f"{path}: truncated payload, expected {count} bytes, found {len(payload)}"
        )
    if len(payload) > count:
        raise DatasetFormatError(
            f"{path}: {len(payload) - count} trailing bytes after payload"
        )
    return np.frombuffer(payload, dtype=np.uint8).reshape(dims)


def write_idx(path, array: np.ndarray) -> None:
    array = np.ascontiguousarray(array, dtype=np.uint8)
    header = struct.pack(">BBBB", 0, 0, IDX_UBYTE, array.ndim)
    header += struct.pack(f">{array.ndim}I", *array.shape)
    Path(path).write_bytes(header + array.tobytes())


def load_dataset(images_path, labels_path, name: str = "") -> Dataset:
    """Read an IDX image/label file pair.

    Image files may be 3-dimensional (N, H, W; grayscale) or 4-dimensional
    (N, H, W, C); labels are 1-dimensional.
    """
    images = read_idx(images_path)
    labels = read_idx(labels_path)
    if images.ndim == 3:
        images = images[..., None]
    elif images.ndim != 4:
        raise DatasetFormatError(
            f"{images_path}: expected 3 or 4 dimensions for images, got {images.ndim}"
        )
    if labels.ndim != 1:
        raise DatasetFormatError(f"{labels_path}: labels must be 1-dimensional")
    if len(images) != len(labels):
        raise DatasetFormatError(
            f"count mismatch: {len(images)} images vs {len(labels)} labels"
        )
    return Dataset(images, labels.astype(np.int64), name)


def save_dataset(dataset: Dataset, images_path, labels_path) -> None:
    """Write a dataset as an IDX pair; single-channel images use 3 dims."""
    images = dataset.images
    if images.shape[3] == 1:
        write_idx(images_path, images[..., 0])
    else:
        write_idx(images_path, images)
    if dataset.labels.min() < 0 or dataset.labels.max() > 255:
        raise DatasetFormatError("labels outside the unsigned byte range")
    write_idx(labels_path, dataset.labels.astype(np.uint8))


def dataset_fingerprint(dataset: Dataset) -> str:
    h = hashlib.sha256()
    h.update(b"idx-dataset")
    h.update(np.asarray(dataset.images.shape, dtype=np.int64).tobytes())
    h.update(dataset.images.tobytes())
    h.update(dataset.labels.astype(np.int64).tobytes())
    return h.hexdigest()

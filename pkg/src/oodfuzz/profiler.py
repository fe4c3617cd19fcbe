"""Training-set statistics that parameterize coverage and the OOD threshold.

A Profile holds per-neuron [low, high] activation bounds over the training
set (the KMNC ranges), the sorted OOD-score distribution of the training
data with its nearest-rank 99th-percentile threshold, and fitted
Mahalanobis parameters.  Profiles are keyed by model and dataset
fingerprints so stale profiles are rejected instead of silently reused.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ProfileMismatchError, UsageError
from .model_io import Dataset, canonical_json, dataset_fingerprint, model_fingerprint
from .ood import MahalanobisParams, OodScorer
from .runtime import Network, forward_trace_batch

DEFAULT_BATCH = 256


@dataclass
class Profile:
    low: np.ndarray  # (neuron_count,) float32
    high: np.ndarray  # (neuron_count,) float32
    ood_scores: np.ndarray  # sorted ascending, float64
    ood_threshold: float
    scorer_kind: str
    scorer_temperature: float
    mahalanobis: MahalanobisParams | None
    model_fingerprint: str
    dataset_fingerprint: str


def nearest_rank_percentile(scores: np.ndarray, percent: int = 99) -> float:
    """Nearest-rank percentile: value at 1-based index ceil(percent/100 * N).

    Computed with integer arithmetic so N being a multiple of 100 never
    falls victim to float rounding.
    """
    scores = np.sort(np.asarray(scores, dtype=np.float64))
    n = scores.shape[0]
    if n == 0:
        raise UsageError("cannot take a percentile of an empty score set")
    if not 0 < percent <= 100:
        raise UsageError(f"percent must be in (0, 100], got {percent}")
    rank = -(-percent * n // 100)  # ceil(percent * n / 100)
    return float(scores[rank - 1])


def _batches(n: int, batch_size: int):
    for start in range(0, n, batch_size):
        yield start, min(start + batch_size, n)


def profile_activations(
    net: Network, train: Dataset, batch_size: int = DEFAULT_BATCH
) -> tuple[np.ndarray, np.ndarray]:
    """Per-neuron [low, high] activation bounds over the training set."""
    if len(train) == 0:
        raise UsageError("cannot profile an empty dataset")
    images = train.to_float()
    low = None
    high = None
    for a, b in _batches(len(train), batch_size):
        values = forward_trace_batch(net, images[a:b]).neuron_values
        bmin = values.min(axis=0)
        bmax = values.max(axis=0)
        low = bmin if low is None else np.minimum(low, bmin)
        high = bmax if high is None else np.maximum(high, bmax)
    return low.astype(np.float32), high.astype(np.float32)


def profile_ood(
    scorer: OodScorer, net: Network, train: Dataset, batch_size: int = DEFAULT_BATCH
) -> tuple[np.ndarray, float]:
    """Sorted training OOD scores and their nearest-rank p99 threshold."""
    if len(train) == 0:
        raise UsageError("cannot profile an empty dataset")
    images = train.to_float()
    chunks = []
    for a, b in _batches(len(train), batch_size):
        traces = forward_trace_batch(net, images[a:b])
        chunks.append(np.asarray(scorer.score_batch(traces), dtype=np.float64))
    scores = np.sort(np.concatenate(chunks))
    return scores, nearest_rank_percentile(scores, 99)


def fit_mahalanobis(
    net: Network, train: Dataset, batch_size: int = DEFAULT_BATCH
) -> MahalanobisParams:
    """Class-conditional feature means and shared ridged covariance inverse.

    The covariance is the pooled within-class scatter divided by N, ridged
    by eps * I with eps = 1e-3 * trace(cov) / dim to keep low-variance toy
    features invertible.
    """
    if len(train) == 0:
        raise UsageError("cannot fit Mahalanobis parameters on an empty dataset")
    labels = train.labels
    if labels.min() < 0 or labels.max() >= net.class_count:
        raise UsageError(
            f"dataset labels span [{labels.min()}, {labels.max()}], "
            f"model has {net.class_count} classes"
        )
    images = train.to_float()
    feats = []
    for a, b in _batches(len(train), batch_size):
        feats.append(forward_trace_batch(net, images[a:b]).penultimate.astype(np.float64))
    features = np.concatenate(feats, axis=0)

    dim = features.shape[1]
    means = np.zeros((net.class_count, dim), dtype=np.float64)
    centered = np.empty_like(features)
    for c in range(net.class_count):
        mask = labels == c
        count = int(mask.sum())
        if count < 2:
            raise UsageError(
                f"class {c} has {count} training examples; need at least 2 per class"
            )
        means[c] = features[mask].mean(axis=0)
        centered[mask] = features[mask] - means[c]
    cov = centered.T @ centered / features.shape[0]
    eps = 1e-3 * np.trace(cov) / dim
    precision = np.linalg.inv(cov + eps * np.eye(dim))
    return MahalanobisParams(means=means, precision=precision)


def build_profile(
    net: Network,
    train: Dataset,
    scorer_kind: str = "oe",
    temperature: float = 1.0,
    batch_size: int = DEFAULT_BATCH,
    include_mahalanobis: bool = True,
) -> Profile:
    """Profile a model against its training set.

    Mahalanobis parameters are fitted unless `include_mahalanobis` is
    False; they are mandatory when the scorer itself is Mahalanobis.
    """
    if scorer_kind == "maha":
        include_mahalanobis = True
    low, high = profile_activations(net, train, batch_size)
    maha = fit_mahalanobis(net, train, batch_size) if include_mahalanobis else None
    scorer = OodScorer(scorer_kind, temperature, maha)
    scores, threshold = profile_ood(scorer, net, train, batch_size)
    return Profile(
        low=low,
        high=high,
        ood_scores=scores,
        ood_threshold=threshold,
        scorer_kind=scorer_kind,
        scorer_temperature=temperature,
        mahalanobis=maha,
        model_fingerprint=model_fingerprint(net),
        dataset_fingerprint=dataset_fingerprint(train),
    )


def check_profile_matches(profile: Profile, net: Network) -> None:
    """Reject profiles computed for a different model."""
    fp = model_fingerprint(net)
    if profile.model_fingerprint != fp:
        raise ProfileMismatchError(
            f"profile was computed for model {profile.model_fingerprint[:12]}..., "
            f"got model {fp[:12]}..."
        )
    if profile.low.shape[0] != net.neuron_count:
        raise ProfileMismatchError(
            f"profile covers {profile.low.shape[0]} neurons, model has {net.neuron_count}"
        )


def profile_to_obj(profile: Profile) -> dict:
    maha = None
    if profile.mahalanobis is not None:
        maha = {
            "means": [[float(v) for v in row] for row in profile.mahalanobis.means],
            "precision": [[float(v) for v in row] for row in profile.mahalanobis.precision],
        }
    return {
        "fingerprint": {
            "model": profile.model_fingerprint,
            "dataset": profile.dataset_fingerprint,
        },
        "low": [float(v) for v in profile.low],
        "high": [float(v) for v in profile.high],
        "ood_scores": [float(v) for v in profile.ood_scores],
        "ood_threshold": float(profile.ood_threshold),
        "scorer": {"kind": profile.scorer_kind, "temperature": profile.scorer_temperature},
        "mahalanobis": maha,
    }


def obj_to_profile(obj: dict) -> Profile:
    maha = None
    if obj.get("mahalanobis") is not None:
        maha = MahalanobisParams(
            means=np.asarray(obj["mahalanobis"]["means"], dtype=np.float64),
            precision=np.asarray(obj["mahalanobis"]["precision"], dtype=np.float64),
        )
    return Profile(
        low=np.asarray(obj["low"], dtype=np.float32),
        high=np.asarray(obj["high"], dtype=np.float32),
        ood_scores=np.asarray(obj["ood_scores"], dtype=np.float64),
        ood_threshold=float(obj["ood_threshold"]),
        scorer_kind=obj["scorer"]["kind"],
        scorer_temperature=float(obj["scorer"]["temperature"]),
        mahalanobis=maha,
        model_fingerprint=obj["fingerprint"]["model"],
        dataset_fingerprint=obj["fingerprint"]["dataset"],
    )


def save_profile(profile: Profile, path) -> None:
    Path(path).write_text(canonical_json(profile_to_obj(profile)) + "\n", encoding="utf-8")


def load_profile(path) -> Profile:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read profile file {path}: {exc}") from exc
    try:
        return obj_to_profile(json.loads(text))
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise UsageError(f"profile file {path} is malformed: {exc}") from exc


def make_scorer(profile: Profile) -> OodScorer:
    """Scorer configured exactly as the profile's threshold was computed."""
    return OodScorer(profile.scorer_kind, profile.scorer_temperature, profile.mahalanobis)

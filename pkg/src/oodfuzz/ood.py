"""OOD scoring and the threshold decision rule.

All scorers are oriented so that a larger score means more
out-of-distribution, which lets one threshold rule serve every method:
a score strictly above the profiled 99th-percentile threshold is OOD,
a score at or below it is in-distribution.

MSP is 1 minus the maximum softmax probability.  OE uses the identical
formula; it is kept as a distinct kind because it is only meaningful on a
network trained with the outlier-exposure loss, and reports attribute
results to the method.  The Mahalanobis score is the minimum over classes
of the squared Mahalanobis distance between the penultimate features and
the class mean under a shared covariance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ProfileMismatchError, ShapeError, UsageError
from .runtime import softmax

SCORER_KINDS = ("msp", "oe", "maha")


@dataclass
class MahalanobisParams:
    """Class-conditional means and shared precision over penultimate features."""

    means: np.ndarray  # (class_count, dim)
    precision: np.ndarray  # (dim, dim), inverse of the ridged pooled covariance

    @property
    def dim(self) -> int:
        return self.means.shape[1]


@dataclass
class OodVerdict:
    score: float
    is_ood: bool
    threshold_used: float


def msp_score_logits(logits: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    """1 - max softmax probability for a batch of logit rows."""
    probs = softmax(logits, temperature)
    return 1.0 - probs.max(axis=-1)


def msp_score(trace, temperature: float = 1.0) -> float:
    return float(msp_score_logits(np.asarray(trace.logits)[None], temperature)[0])


def oe_score(trace, temperature: float = 1.0) -> float:
    """Outlier-exposure score: the MSP formula on an OE-trained network."""
    return msp_score(trace, temperature)


def mahalanobis_score_features(features: np.ndarray, params: MahalanobisParams) -> np.ndarray:
    """Min-over-classes squared Mahalanobis distance for feature rows."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != params.dim:
        raise ShapeError(
            f"features have dimension {features.shape[-1]}, "
            f"Mahalanobis params expect {params.dim}"
        )
    dists = np.empty((features.shape[0], params.means.shape[0]), dtype=np.float64)
    for c in range(params.means.shape[0]):
        centered = features - params.means[c]
        dists[:, c] = np.einsum("nd,de,ne->n", centered, params.precision, centered)
    return dists.min(axis=1)


def mahalanobis_score(trace, params: MahalanobisParams) -> float:
    return float(mahalanobis_score_features(np.asarray(trace.penultimate)[None], params)[0])


@dataclass
class OodScorer:
    """A scorer kind plus the parameters it needs; higher score = more OOD."""

    kind: str
    temperature: float = 1.0
    mahalanobis: MahalanobisParams | None = None

    def __post_init__(self):
        if self.kind not in SCORER_KINDS:
            raise UsageError(f"unknown scorer kind {self.kind!r}, expected one of {SCORER_KINDS}")
        if self.temperature <= 0:
            raise UsageError(f"scorer temperature must be positive, got {self.temperature}")
        if self.kind == "maha" and self.mahalanobis is None:
            raise UsageError("maha scorer requires fitted Mahalanobis parameters")

    def score_trace(self, trace) -> float:
        if self.kind == "maha":
            return mahalanobis_score(trace, self.mahalanobis)
        return msp_score(trace, self.temperature)

    def score_batch(self, traces) -> np.ndarray:
        """Scores for a TraceBatch (or anything with logits/penultimate arrays)."""
        if self.kind == "maha":
            return mahalanobis_score_features(traces.penultimate, self.mahalanobis)
        return msp_score_logits(np.asarray(traces.logits), self.temperature)


def is_ood(score: float, profile, scorer_kind: str | None = None) -> OodVerdict:
    """Threshold decision: strictly above the profiled threshold is OOD.

    A score equal to the threshold counts as in-distribution.  When
    `scorer_kind` is given it must match the kind the profile's threshold
    was computed with.
    """
    if scorer_kind is not None and scorer_kind != profile.scorer_kind:
        raise ProfileMismatchError(
            f"profile threshold was computed with scorer {profile.scorer_kind!r}, "
            f"got score from {scorer_kind!r}"
        )
    threshold = float(profile.ood_threshold)
    return OodVerdict(score=float(score), is_ood=bool(score > threshold), threshold_used=threshold)

"""Neuron coverage (NC) and k-multisection neuron coverage (KMNC).

Both criteria share a monotone bitset state: bits only ever flip from 0 to
1, so coverage ratio is non-decreasing and states merge as a bitwise union
(a join-semilattice).  NC marks a neuron when its per-layer min-max scaled
value for one trace exceeds a threshold; KMNC splits each neuron's
training-time [low, high] range into k equal sections and marks the section
a trace's value falls into.  Values outside the profiled range mark nothing
(boundary coverage is a different criterion and out of scope).
"""

from __future__ import annotations

import base64
from dataclasses import dataclass

import numpy as np

from .errors import ProfileMismatchError, UsageError

CRITERIA = ("nc", "kmnc")


@dataclass(frozen=True)
class CoverageConfig:
    criterion: str = "kmnc"
    nc_threshold: float = 0.75
    kmnc_sections: int = 100

    def __post_init__(self):
        if self.criterion not in CRITERIA:
            raise UsageError(f"unknown criterion {self.criterion!r}, expected one of {CRITERIA}")
        if not 0.0 < self.nc_threshold < 1.0:
            raise UsageError(f"nc_threshold must be in (0, 1), got {self.nc_threshold}")
        if self.kmnc_sections < 1:
            raise UsageError(f"kmnc_sections must be >= 1, got {self.kmnc_sections}")


class CoverageState:
    """Monotone bitset over neurons (NC) or neuron x section cells (KMNC)."""

    def __init__(self, config: CoverageConfig, neuron_count: int):
        self.config = config
        self.neuron_count = int(neuron_count)
        if config.criterion == "nc":
            capacity = self.neuron_count
        else:
            capacity = self.neuron_count * config.kmnc_sections
        self.bits = np.zeros(capacity, dtype=bool)
        self.covered = 0

    @property
    def capacity(self) -> int:
        return self.bits.shape[0]

    @property
    def ratio(self) -> float:
        if self.capacity == 0:
            return 0.0
        return self.covered / self.capacity

    def copy(self) -> "CoverageState":
        out = CoverageState(self.config, self.neuron_count)
        out.bits = self.bits.copy()
        out.covered = self.covered
        return out


def nc_cells(trace, config: CoverageConfig) -> np.ndarray:
    """Indices of neurons this trace covers under NC.

    Neuron values are min-max scaled within each layer; a layer whose
    values are all equal scales to zero and covers nothing.
    """
    values = np.asarray(trace.neuron_values, dtype=np.float64)
    if values.size == 0:
        return np.empty(0, dtype=np.int64)
    sizes = np.asarray(trace.layer_sizes, dtype=np.int64)
    starts = np.concatenate(([0], np.cumsum(sizes)[:-1]))
    lo = np.minimum.reduceat(values, starts)
    hi = np.maximum.reduceat(values, starts)
    span = np.repeat(hi - lo, sizes)
    base = np.repeat(lo, sizes)
    scaled = np.zeros_like(values)
    nz = span > 0
    scaled[nz] = (values[nz] - base[nz]) / span[nz]
    return np.nonzero(scaled > config.nc_threshold)[0]


def kmnc_cells(trace, profile, config: CoverageConfig) -> np.ndarray:
    """Indices of (neuron, section) cells this trace covers under KMNC.

    Cell index is neuron * k + section.  Values outside [low, high] mark
    nothing; a zero-width range maps its single value to section 0; the
    section at v == high clamps to k - 1.
    """
    values = np.asarray(trace.neuron_values, dtype=np.float64)
    low = np.asarray(profile.low, dtype=np.float64)
    high = np.asarray(profile.high, dtype=np.float64)
    if values.shape != low.shape:
        raise ProfileMismatchError(
            f"profile covers {low.shape[0]} neurons but trace has {values.shape[0]}"
        )
    k = config.kmnc_sections
    in_range = (values >= low) & (values <= high)
    width = high - low
    sections = np.zeros(values.shape[0], dtype=np.int64)
    pos = in_range & (width > 0)
    sections[pos] = np.minimum(
        np.floor((values[pos] - low[pos]) / width[pos] * k), k - 1
    ).astype(np.int64)
    neurons = np.nonzero(in_range)[0]
    return neurons * k + sections[neurons]


def _cells(state: CoverageState, trace, profile):
    if state.config.criterion == "nc":
        return nc_cells(trace, state.config)
    return kmnc_cells(trace, profile, state.config)


def _check_config(state: CoverageState, config: CoverageConfig | None):
    if config is not None and config != state.config:
        raise UsageError(f"config {config} does not match state config {state.config}")


def nc_update(state: CoverageState, trace, config: CoverageConfig | None = None) -> int:
    """Commit a trace under NC; returns the number of newly covered neurons."""
    _check_config(state, config)
    if state.config.criterion != "nc":
        raise UsageError("nc_update called on a state configured for kmnc")
    return _commit_cells(state, nc_cells(trace, state.config))


def kmnc_update(state: CoverageState, trace, profile, config: CoverageConfig | None = None) -> int:
    """Commit a trace under KMNC; returns newly covered (neuron, section) count."""
    _check_config(state, config)
    if state.config.criterion != "kmnc":
        raise UsageError("kmnc_update called on a state configured for nc")
    return _commit_cells(state, kmnc_cells(trace, profile, state.config))


def commit_trace(state: CoverageState, trace, profile=None) -> int:
    """Criterion-dispatching commit; returns newly covered cell count."""
    return _commit_cells(state, _cells(state, trace, profile))


def _commit_cells(state: CoverageState, cells: np.ndarray) -> int:
    fresh = cells[~state.bits[cells]]
    state.bits[fresh] = True
    state.covered += fresh.shape[0]
    return int(fresh.shape[0])


def coverage_gain(state: CoverageState, trace, profile=None, config: CoverageConfig | None = None) -> bool:
    """Pure query: would committing this trace set at least one new bit?"""
    _check_config(state, config)
    cells = _cells(state, trace, profile)
    return bool(np.any(~state.bits[cells]))


def merge(a: CoverageState, b: CoverageState) -> CoverageState:
    """Bitwise union of two states with identical config and capacity."""
    if a.config != b.config or a.capacity != b.capacity or a.neuron_count != b.neuron_count:
        raise UsageError(
            f"cannot merge states: config/capacity mismatch "
            f"({a.config}, {a.capacity}) vs ({b.config}, {b.capacity})"
        )
    out = CoverageState(a.config, a.neuron_count)
    out.bits = a.bits | b.bits
    out.covered = int(out.bits.sum())
    return out


def state_to_obj(state: CoverageState) -> dict:
    packed = np.packbits(state.bits.astype(np.uint8))
    return {
        "criterion": state.config.criterion,
        "config": {
            "nc_threshold": state.config.nc_threshold,
            "kmnc_sections": state.config.kmnc_sections,
        },
        "neuron_count": state.neuron_count,
        "covered_bits": base64.b64encode(packed.tobytes()).decode("ascii"),
        "ratio": state.ratio,
    }


def obj_to_state(obj: dict) -> CoverageState:
    config = CoverageConfig(
        criterion=obj["criterion"],
        nc_threshold=obj["config"]["nc_threshold"],
        kmnc_sections=obj["config"]["kmnc_sections"],
    )
    state = CoverageState(config, obj["neuron_count"])
    raw = np.frombuffer(base64.b64decode(obj["covered_bits"]), dtype=np.uint8)
    bits = np.unpackbits(raw)[: state.capacity].astype(bool)
    state.bits = bits
    state.covered = int(bits.sum())
    return state

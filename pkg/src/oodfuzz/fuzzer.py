"""The coverage-guided testing loop with OOD analysis.

Seeds (training images) are scheduled FIFO round-robin; each selection
spends an energy budget of mutants derived from the seed's mutation chain.
Every mutant is run through the network, scored for OOD, and checked for
coverage gain.  A mutant predicted with its seed's label that gains
coverage and is in-distribution goes back into the seed pool; errors are
recorded with their OOD verdict and never requeued.  Coverage is committed
for requeued cases (and, behind a flag, for OOD benign-gain cases).

One corpus serves both report views: "before" counts every recorded case,
"after" drops the OOD-flagged ones.  All artifacts are deterministic
functions of (model, profile, seeds, config), including record timestamps,
which are logical step counters rather than wall-clock times.
"""

from __future__ import annotations

import json
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .coverage import (
    CoverageConfig,
    CoverageState,
    commit_trace,
    coverage_gain,
    obj_to_state,
    state_to_obj,
)
from .errors import InsufficientErrorsError, ProfileMismatchError, UsageError
from .model_io import (
    Dataset,
    canonical_json,
    dataset_fingerprint,
    json_fingerprint,
    load_dataset,
    model_fingerprint,
    save_dataset,
)
from .mutation import (
    PIXEL_OPS,
    apply_chain,
    apply_chain_with_reference,
    chain_has_affine,
    chain_to_obj,
    check_validity,
    mutate,
    obj_to_chain,
    sample_spec,
)
from .ood import OodScorer, OodVerdict, is_ood
from .profiler import Profile, check_profile_matches
from .runtime import Network, forward_trace_batch

OUTCOME_KINDS = ("benign_gain", "benign_no_gain", "error")
RECORDED_KINDS = ("benign_gain", "error")

RUN_FILE = "run.json"
RECORDS_FILE = "records.jsonl"
COVERAGE_FILE = "coverage.json"
REPORT_FILE = "report.json"
SEED_IMAGES_FILE = "seed-images.idx"
SEED_LABELS_FILE = "seed-labels.idx"


@dataclass
class FuzzConfig:
    criterion: str = "kmnc"
    scorer: str = "oe"
    budget: int = 50_000
    energy: int = 20
    run_seed: int = 0
    temperature: float = 1.0
    nc_threshold: float = 0.75
    kmnc_sections: int = 100
    commit_ood_coverage: bool = False
    # False runs the unguided baseline: requeue ignores the OOD verdict, so
    # a separate guided run can be compared against it (two-run mode)
    ood_guided_requeue: bool = True
    workers: int = 1

    def __post_init__(self):
        if self.budget < 0:
            raise UsageError(f"budget must be >= 0, got {self.budget}")
        if self.energy < 1:
            raise UsageError(f"energy must be >= 1, got {self.energy}")
        if self.workers < 1:
            raise UsageError(f"workers must be >= 1, got {self.workers}")

    def coverage_config(self) -> CoverageConfig:
        return CoverageConfig(
            criterion=self.criterion,
            nc_threshold=self.nc_threshold,
            kmnc_sections=self.kmnc_sections,
        )

    def to_obj(self) -> dict:
        return {
            "criterion": self.criterion,
            "scorer": self.scorer,
            "budget": self.budget,
            "energy": self.energy,
            "run_seed": self.run_seed,
            "temperature": self.temperature,
            "nc_threshold": self.nc_threshold,
            "kmnc_sections": self.kmnc_sections,
            "commit_ood_coverage": self.commit_ood_coverage,
            "ood_guided_requeue": self.ood_guided_requeue,
            "workers": self.workers,
        }


@dataclass
class SeedEntry:
    root_index: int
    label: int
    chain: tuple = ()
    times_selected: int = 0
    origin: str = "initial"
    parent_record: int | None = None


@dataclass
class FuzzOutcome:
    kind: str
    is_ood: bool
    ood_score: float
    coverage_gain: bool
    predicted_class: int


@dataclass
class CorpusRecord:
    id: int
    root_index: int
    parent_id: int | None
    seed_label: int
    chain: tuple
    outcome: FuzzOutcome
    step: int
    config_fingerprint: str

    def to_obj(self) -> dict:
        return {
            "id": self.id,
            "root_index": self.root_index,
            "parent_id": self.parent_id,
            "seed_label": self.seed_label,
            "chain": chain_to_obj(self.chain),
            "kind": self.outcome.kind,
            "is_ood": self.outcome.is_ood,
            "ood_score": self.outcome.ood_score,
            "coverage_gain": self.outcome.coverage_gain,
            "predicted_class": self.outcome.predicted_class,
            "step": self.step,
            "config_fingerprint": self.config_fingerprint,
        }

    @staticmethod
    def from_obj(obj: dict) -> "CorpusRecord":
        outcome = FuzzOutcome(
            kind=obj["kind"],
            is_ood=bool(obj["is_ood"]),
            ood_score=float(obj["ood_score"]),
            coverage_gain=bool(obj["coverage_gain"]),
            predicted_class=int(obj["predicted_class"]),
        )
        return CorpusRecord(
            id=int(obj["id"]),
            root_index=int(obj["root_index"]),
            parent_id=obj["parent_id"],
            seed_label=int(obj["seed_label"]),
            chain=obj_to_chain(obj["chain"]),
            outcome=outcome,
            step=int(obj["step"]),
            config_fingerprint=obj["config_fingerprint"],
        )


def classify(trace, seed_label: int, gained: bool, verdict: OodVerdict):
    """Outcome bucketing plus the requeue rule.

    Requeue only when the mutant is predicted correctly, gains coverage and
    is in-distribution; errors are never requeued.
    """
    correct = int(trace.predicted_class) == int(seed_label)
    if not correct:
        kind = "error"
    elif gained:
        kind = "benign_gain"
    else:
        kind = "benign_no_gain"
    outcome = FuzzOutcome(
        kind=kind,
        is_ood=verdict.is_ood,
        ood_score=verdict.score,
        coverage_gain=gained,
        predicted_class=int(trace.predicted_class),
    )
    return outcome, (correct and gained and not verdict.is_ood)


@dataclass
class FuzzResult:
    coverage: CoverageState
    records: list
    report: dict


def delta_percent(before: int, after: int) -> float:
    """(before - after) / before * 100, defined as 0 for an empty before."""
    if before == 0:
        return 0.0
    return (before - after) / before * 100.0


def report_counts(records) -> dict:
    """Table-shaped counts: before ignores OOD flags, after excludes them."""
    benign_before = sum(1 for r in records if r.outcome.kind == "benign_gain")
    benign_after = sum(
        1 for r in records if r.outcome.kind == "benign_gain" and not r.outcome.is_ood
    )
    error_before = sum(1 for r in records if r.outcome.kind == "error")
    error_after = sum(1 for r in records if r.outcome.kind == "error" and not r.outcome.is_ood)
    return {
        "benign": {
            "before": benign_before,
            "after": benign_after,
            "delta_percent": delta_percent(benign_before, benign_after),
        },
        "error": {
            "before": error_before,
            "after": error_after,
            "delta_percent": delta_percent(error_before, error_after),
        },
    }


def make_report(records, criterion: str, stats: dict | None = None, saturation=None) -> dict:
    report = {"criterion": criterion, "counts": report_counts(records)}
    if stats is not None:
        report["stats"] = stats
    if saturation is not None:
        report["saturation"] = [[int(g), float(r)] for g, r in saturation]
    return report


def render_report(report: dict, view: str = "both") -> str:
    """Aligned text table over the requested view of the counts."""
    if view not in ("before", "after", "both"):
        raise UsageError(f"unknown report view {view!r}")
    counts = report["counts"]
    if view == "both":
        header = f"{'criterion':<10} {'type':<7} {'before':>9} {'after':>9} {'delta%':>8}"
        lines = [header]
        for kind in ("benign", "error"):
            row = counts[kind]
            lines.append(
                f"{report['criterion']:<10} {kind:<7} {row['before']:>9} "
                f"{row['after']:>9} {row['delta_percent']:>8.2f}"
            )
    else:
        header = f"{'criterion':<10} {'type':<7} {view:>9}"
        lines = [header]
        for kind in ("benign", "error"):
            lines.append(f"{report['criterion']:<10} {kind:<7} {counts[kind][view]:>9}")
    return "\n".join(lines)


def _check_seeds(net: Network, seeds: Dataset):
    if len(seeds) == 0:
        raise UsageError("seed dataset is empty")
    if seeds.image_shape != net.input_shape:
        raise UsageError(
            f"seed images have shape {seeds.image_shape}, network expects {net.input_shape}"
        )
    if seeds.labels.min() < 0 or seeds.labels.max() >= net.class_count:
        raise UsageError("seed labels outside [0, class_count)")


def run_fuzz(
    net: Network,
    profile: Profile,
    seeds: Dataset,
    cfg: FuzzConfig,
    out_dir=None,
) -> FuzzResult:
    """Run the full testing loop; see the module docstring for the rules."""
    check_profile_matches(profile, net)
    if cfg.scorer != profile.scorer_kind:
        raise ProfileMismatchError(
            f"profile threshold was computed with scorer {profile.scorer_kind!r}, "
            f"config asks for {cfg.scorer!r}"
        )
    _check_seeds(net, seeds)
    scorer = OodScorer(cfg.scorer, cfg.temperature, profile.mahalanobis)

    config_fp = json_fingerprint(
        {
            "config": cfg.to_obj(),
            "model": profile.model_fingerprint,
            "seeds": dataset_fingerprint(seeds),
        }
    )

    records_fh = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        run_obj = {
            "engine": "oodfuzz",
            "command": "fuzz",
            "config": cfg.to_obj(),
            "config_fingerprint": config_fp,
            "model_fingerprint": profile.model_fingerprint,
            "profile_fingerprint": {
                "model": profile.model_fingerprint,
                "dataset": profile.dataset_fingerprint,
            },
            "seeds_fingerprint": dataset_fingerprint(seeds),
            "seed_count": len(seeds),
        }
        # run.json goes first so a crashed run still has its provenance
        (out_dir / RUN_FILE).write_text(canonical_json(run_obj) + "\n", encoding="utf-8")
        save_dataset(seeds, out_dir / SEED_IMAGES_FILE, out_dir / SEED_LABELS_FILE)
        records_fh = (out_dir / RECORDS_FILE).open("w", encoding="utf-8")

    state = CoverageState(cfg.coverage_config(), net.neuron_count)
    master = np.random.Generator(np.random.PCG64(cfg.run_seed))
    queue = deque(
        SeedEntry(root_index=i, label=int(seeds.labels[i])) for i in range(len(seeds))
    )
    float_images = seeds.to_float()

    records: list[CorpusRecord] = []
    saturation: list[tuple[int, float]] = []
    generated = 0
    iterations = 0
    discarded_invalid = 0
    requeued = 0
    benign_no_gain = 0

    pool = ThreadPoolExecutor(cfg.workers) if cfg.workers > 1 else None
    try:
        while generated < cfg.budget and queue:
            # one round: up to `workers` seeds, mutants drawn sequentially so
            # the artifact stream is identical for any worker count
            batch = []
            planned = generated
            while len(batch) < cfg.workers and queue and planned < cfg.budget:
                entry = queue.popleft()
                alloc = min(cfg.energy, cfg.budget - planned)
                planned += alloc
                root = float_images[entry.root_index]
                base, reference = apply_chain_with_reference(root, entry.chain)
                allow_affine = not chain_has_affine(entry.chain)
                mutants = []
                attempts = 0
                while len(mutants) < alloc and attempts < alloc * 8:
                    attempts += 1
                    spec = sample_spec(master, allow_affine)
                    candidate = mutate(base, spec)
                    if spec.operator in PIXEL_OPS and not check_validity(reference, candidate):
                        discarded_invalid += 1
                        continue
                    mutants.append((spec, candidate))
                batch.append((entry, mutants))

            def evaluate(item):
                _, mutants = item
                if not mutants:
                    return None, None
                images = np.stack([img for _, img in mutants])
                traces = forward_trace_batch(net, images)
                return traces, scorer.score_batch(traces)

            evaluated = list(pool.map(evaluate, batch)) if pool else [evaluate(b) for b in batch]

            for (entry, mutants), (traces, scores) in zip(batch, evaluated):
                iterations += 1
                entry.times_selected += 1
                for j, (spec, _) in enumerate(mutants):
                    trace = traces[j]
                    verdict = is_ood(float(scores[j]), profile, cfg.scorer)
                    gained = coverage_gain(state, trace, profile)
                    outcome, requeue = classify(trace, entry.label, gained, verdict)
                    if not cfg.ood_guided_requeue:
                        # unguided baseline: the verdict plays no role in the loop
                        requeue = outcome.kind == "benign_gain"
                    if requeue or (
                        outcome.kind == "benign_gain"
                        and outcome.is_ood
                        and cfg.commit_ood_coverage
                    ):
                        commit_trace(state, trace, profile)
                    generated += 1
                    if outcome.kind == "benign_no_gain":
                        benign_no_gain += 1
                    record_id = None
                    if outcome.kind in RECORDED_KINDS:
                        record_id = len(records)
                        record = CorpusRecord(
                            id=record_id,
                            root_index=entry.root_index,
                            parent_id=entry.parent_record,
                            seed_label=entry.label,
                            chain=entry.chain + (spec,),
                            outcome=outcome,
                            step=generated,
                            config_fingerprint=config_fp,
                        )
                        records.append(record)
                        if records_fh is not None:
                            records_fh.write(canonical_json(record.to_obj()) + "\n")
                    if requeue:
                        requeued += 1
                        queue.append(
                            SeedEntry(
                                root_index=entry.root_index,
                                label=entry.label,
                                chain=entry.chain + (spec,),
                                origin="requeued",
                                parent_record=record_id,
                            )
                        )
                queue.append(entry)
                saturation.append((generated, state.ratio))
    finally:
        if pool:
            pool.shutdown()
        if records_fh is not None:
            records_fh.close()

    stats = {
        "generated": generated,
        "benign_gain": sum(1 for r in records if r.outcome.kind == "benign_gain"),
        "benign_no_gain": benign_no_gain,
        "errors": sum(1 for r in records if r.outcome.kind == "error"),
        "invalid_discarded": discarded_invalid,
        "requeued": requeued,
        "iterations": iterations,
        "coverage_ratio": state.ratio,
        "covered_cells": state.covered,
        "capacity": state.capacity,
    }
    report = make_report(records, cfg.criterion, stats, saturation)

    if out_dir is not None:
        (out_dir / COVERAGE_FILE).write_text(
            canonical_json(state_to_obj(state)) + "\n", encoding="utf-8"
        )
        (out_dir / REPORT_FILE).write_text(canonical_json(report) + "\n", encoding="utf-8")
    return FuzzResult(coverage=state, records=records, report=report)


# ---------------------------------------------------------------------------
# corpus persistence


@dataclass
class Corpus:
    run: dict
    records: list
    seeds: Dataset
    coverage: CoverageState | None = None
    report: dict | None = None


def load_corpus(corpus_dir) -> Corpus:
    corpus_dir = Path(corpus_dir)
    run_path = corpus_dir / RUN_FILE
    if not run_path.exists():
        raise UsageError(f"{corpus_dir} is not a corpus directory (missing {RUN_FILE})")
    run = json.loads(run_path.read_text(encoding="utf-8"))
    records = []
    records_path = corpus_dir / RECORDS_FILE
    if records_path.exists():
        with records_path.open(encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    records.append(CorpusRecord.from_obj(json.loads(line)))
    seeds = load_dataset(
        corpus_dir / SEED_IMAGES_FILE, corpus_dir / SEED_LABELS_FILE, name="corpus-seeds"
    )
    coverage = None
    cov_path = corpus_dir / COVERAGE_FILE
    if cov_path.exists():
        coverage = obj_to_state(json.loads(cov_path.read_text(encoding="utf-8")))
    report = None
    report_path = corpus_dir / REPORT_FILE
    if report_path.exists():
        report = json.loads(report_path.read_text(encoding="utf-8"))
    return Corpus(run=run, records=records, seeds=seeds, coverage=coverage, report=report)


def replay_record(record: CorpusRecord, seeds: Dataset) -> np.ndarray:
    """Re-materialize a record's image by replaying its chain on the seed."""
    return apply_chain(seeds.image_float(record.root_index), record.chain)


def verify_record(net: Network, record: CorpusRecord, seeds: Dataset) -> bool:
    """True iff a fresh forward pass reproduces the recorded prediction."""
    image = replay_record(record, seeds)
    trace = forward_trace_batch(net, image[None])[0]
    return int(trace.predicted_class) == record.outcome.predicted_class


SELECTIONS = ("random", "id_only", "ood_only")


def select_errors(records, selection: str, count: int, rng: np.random.Generator, exclude_ids=()):
    """Pick `count` error records under a selection rule, excluding ids.

    Sampling is uniform without replacement; the result is sorted by record
    id so identical chosen sets materialize identically downstream.
    """
    if selection not in SELECTIONS:
        raise UsageError(f"unknown selection {selection!r}, expected one of {SELECTIONS}")
    exclude = set(exclude_ids)
    pool = [r for r in records if r.outcome.kind == "error" and r.id not in exclude]
    if selection == "id_only":
        pool = [r for r in pool if not r.outcome.is_ood]
    elif selection == "ood_only":
        pool = [r for r in pool if r.outcome.is_ood]
    if len(pool) < count:
        raise InsufficientErrorsError(
            f"selection {selection!r} needs {count} error cases, corpus has {len(pool)}"
        )
    chosen_idx = rng.choice(len(pool), size=count, replace=False)
    return sorted((pool[i] for i in chosen_idx), key=lambda r: r.id)


def export_errors(
    records,
    seeds: Dataset,
    selection: str,
    count: int,
    rng: np.random.Generator,
    exclude_ids=(),
):
    """Materialize selected error cases; returns (images, labels, ids)."""
    chosen = select_errors(records, selection, count, rng, exclude_ids)
    images = np.stack([replay_record(r, seeds) for r in chosen])
    labels = np.asarray([r.seed_label for r in chosen], dtype=np.int64)
    ids = [r.id for r in chosen]
    return images, labels, ids

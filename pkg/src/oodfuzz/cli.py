"""Command-line entry point: profile -> fuzz -> report -> retrain.

Every run writes its provenance (config plus input fingerprints) into the
artifacts it produces, so any artifact is reproducible from run.json and
the input files alone.  Exit codes: 0 success, 2 usage/input error,
3 runtime contract violation.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ContractError, UsageError
from .fuzzer import (
    FuzzConfig,
    load_corpus,
    make_report,
    render_report,
    replay_record,
    run_fuzz,
)
from .model_io import (
    canonical_json,
    load_dataset,
    load_model,
    model_fingerprint,
    save_model,
)
from .profiler import build_profile, load_profile, save_profile
from .runtime import forward_trace_batch
from .trainer import (
    ExperimentSpec,
    TrainConfig,
    evaluate,
    init_mlp,
    oe_train,
    retrain_experiment,
    train,
)


def _dataset_pair(arg: str, name: str = ""):
    parts = arg.split(",")
    if len(parts) != 2:
        raise UsageError(
            f"expected IMAGES,LABELS (two comma-separated paths), got {arg!r}"
        )
    return load_dataset(parts[0], parts[1], name)


def _write_json(path, obj) -> None:
    Path(path).write_text(canonical_json(obj) + "\n", encoding="utf-8")


def cmd_train(args) -> int:
    data = _dataset_pair(args.data, "train")
    hidden = tuple(int(h) for h in args.hidden.split(",") if h)
    class_count = int(data.labels.max()) + 1 if args.classes is None else args.classes
    net = init_mlp(data.image_shape, hidden, class_count, rng_seed=args.seed)
    cfg = TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        learning_rate=args.lr,
        momentum=args.momentum,
        rng_seed=args.seed,
        oe_lambda=args.oe_lambda,
    )
    if args.init_from:
        net = load_model(args.init_from)
    if args.outliers:
        outliers = _dataset_pair(args.outliers, "outliers")
        net, losses = oe_train(net, data, outliers, cfg)
    else:
        net, losses = train(net, data, cfg)
    save_model(net, args.out)
    summary = {
        "model": str(args.out),
        "model_fingerprint": model_fingerprint(net),
        "final_loss": losses[-1] if losses else None,
        "train_accuracy": evaluate(net, data),
    }
    if args.test:
        summary["test_accuracy"] = evaluate(net, _dataset_pair(args.test, "test"))
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


def cmd_profile(args) -> int:
    net = load_model(args.model)
    data = _dataset_pair(args.data, "train")
    profile = build_profile(
        net,
        data,
        scorer_kind=args.scorer,
        temperature=args.temperature,
        include_mahalanobis=not args.no_mahalanobis,
    )
    save_profile(profile, args.out)
    print(
        json.dumps(
            {
                "profile": str(args.out),
                "ood_threshold": profile.ood_threshold,
                "scorer": profile.scorer_kind,
                "neurons": int(profile.low.shape[0]),
                "low_min": float(profile.low.min()),
                "high_max": float(profile.high.max()),
                "train_scores": len(profile.ood_scores),
            },
            indent=2,
            sort_keys=True,
        )
    )
    return 0


def cmd_fuzz(args) -> int:
    net = load_model(args.model)
    profile = load_profile(args.profile)
    seeds = _dataset_pair(args.seeds, "seeds")
    cfg = FuzzConfig(
        criterion=args.criterion,
        scorer=args.scorer,
        budget=args.budget,
        energy=args.energy,
        run_seed=args.run_seed,
        temperature=args.temperature,
        nc_threshold=args.nc_threshold,
        kmnc_sections=args.k_sections,
        commit_ood_coverage=args.commit_ood_coverage,
        ood_guided_requeue=not args.unguided_requeue,
        workers=args.workers,
    )
    result = run_fuzz(net, profile, seeds, cfg, out_dir=args.out)
    print(render_report(result.report, "both"))
    print(json.dumps(result.report["stats"], indent=2, sort_keys=True))
    return 0


def cmd_report(args) -> int:
    corpus = load_corpus(args.corpus)
    criterion = corpus.run.get("config", {}).get("criterion", "?")
    report = make_report(corpus.records, criterion)
    if corpus.report is not None and "stats" in corpus.report:
        report["stats"] = corpus.report["stats"]
    if args.out:
        _write_json(args.out, report)
    print(render_report(report, args.view))
    return 0


def cmd_retrain(args) -> int:
    net = load_model(args.model)
    train_data = _dataset_pair(args.train, "train")
    corpus_dirs = args.corpus.split(",")
    corpora = [load_corpus(d) for d in corpus_dirs]
    primary = corpora[0]

    arms = tuple(
        {"random": "random", "id": "id_only", "id_only": "id_only", "ood": "ood_only",
         "ood_only": "ood_only"}[a.strip()]
        for a in args.arms.split(",")
        if a.strip()
    )
    holdout_ids = None
    holdout_note = "random_sample"
    if len(corpora) > 1:
        # errors found under every provided run, matched by root seed index
        common_roots = set(
            r.root_index for r in corpora[0].records if r.outcome.kind == "error"
        )
        for extra in corpora[1:]:
            common_roots &= set(
                r.root_index for r in extra.records if r.outcome.kind == "error"
            )
        candidates = [
            r
            for r in primary.records
            if r.outcome.kind == "error" and r.root_index in common_roots
        ]
        if len(candidates) >= args.holdout_count:
            rng = np.random.default_rng([args.seed, 99])
            chosen = rng.choice(len(candidates), size=args.holdout_count, replace=False)
            holdout_ids = tuple(sorted(candidates[i].id for i in chosen))
            holdout_note = "intersection_by_root_seed"

    spec = ExperimentSpec(
        arms=arms,
        retrain_error_count=args.retrain_count,
        holdout_error_count=args.holdout_count,
        train_config=TrainConfig(
            epochs=args.epochs,
            batch_size=args.batch_size,
            learning_rate=args.lr,
            momentum=args.momentum,
            rng_seed=args.seed,
        ),
        rng_seed=args.seed,
        from_scratch=args.from_scratch,
        holdout_ids=holdout_ids,
    )
    results = retrain_experiment(net, train_data, primary.records, primary.seeds, spec)
    results["holdout"]["policy"] = holdout_note if holdout_ids else results["holdout"]["policy"]
    results["corpus"] = corpus_dirs
    _write_json(args.out, results)
    width = max(len(a) for a in arms)
    print(f"{'arm':<{width}}  accuracy  ood_fraction")
    for arm in arms:
        row = results["arms"][arm]
        print(f"{arm:<{width}}  {row['accuracy']:8.4f}  {row['ood_fraction']:12.4f}")
    print(f"base accuracy on holdout: {results['base_accuracy']:.4f}")
    return 0


def cmd_replay(args) -> int:
    corpus = load_corpus(args.corpus)
    record = next((r for r in corpus.records if r.id == args.id), None)
    if record is None:
        raise UsageError(f"record id {args.id} not found in {args.corpus}")
    image = replay_record(record, corpus.seeds)
    out = {
        "id": record.id,
        "root_index": record.root_index,
        "seed_label": record.seed_label,
        "kind": record.outcome.kind,
        "recorded_predicted_class": record.outcome.predicted_class,
        "chain": [s.operator for s in record.chain],
    }
    if args.model:
        net = load_model(args.model)
        trace = forward_trace_batch(net, image[None])[0]
        out["replayed_predicted_class"] = int(trace.predicted_class)
        out["replay_matches"] = int(trace.predicted_class) == record.outcome.predicted_class
    if args.out:
        payload = dict(out)
        payload["image"] = [[float(v) for v in row] for row in image[:, :, 0]]
        _write_json(args.out, payload)
    print(json.dumps(out, indent=2, sort_keys=True))
    return 0


def cmd_logits(args) -> int:
    net = load_model(args.model)
    images = _dataset_pair(args.data, "probe").to_float() if "," in args.data else None
    if images is None:
        from .model_io import read_idx

        raw = read_idx(args.data)
        if raw.ndim == 3:
            raw = raw[..., None]
        images = raw.astype(np.float32) / np.float32(255.0)
    if args.count:
        images = images[: args.count]
    traces = forward_trace_batch(net, images)
    obj = {
        "model_fingerprint": model_fingerprint(net),
        "logits": [[float(v) for v in row] for row in traces.logits],
        "predicted": [int(v) for v in traces.predicted_class],
    }
    if args.out:
        _write_json(args.out, obj)
    else:
        print(json.dumps(obj))
    return 0


def cmd_synth(args) -> int:
    from .synth import write_standard_layout

    manifest = write_standard_layout(
        args.out_dir, args.train, args.test, args.outliers, args.seed
    )
    print(json.dumps(manifest, indent=2, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="oodfuzz",
        description="OOD-guided coverage fuzzing for feed-forward classifiers",
    )
    parser.add_argument("--version", action="version", version=f"oodfuzz {__version__}")
    parser.add_argument(
        "--error-json",
        metavar="PATH",
        default=None,
        help="on failure, also write a machine-readable error JSON here",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train an MLP (plain or outlier-exposure)")
    p.add_argument("--data", required=True, metavar="IMAGES,LABELS")
    p.add_argument("--test", metavar="IMAGES,LABELS")
    p.add_argument("--outliers", metavar="IMAGES,LABELS", help="enables OE training")
    p.add_argument("--hidden", default="128,64")
    p.add_argument("--classes", type=int, default=None)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--batch-size", type=int, default=128)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--oe-lambda", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--init-from", metavar="MODEL", help="fine-tune an existing model")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("profile", help="profile a model against its training set")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True, metavar="IMAGES,LABELS")
    p.add_argument("--scorer", choices=["msp", "oe", "maha"], default="oe")
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--no-mahalanobis", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_profile)

    p = sub.add_parser("fuzz", help="run the coverage-guided testing loop")
    p.add_argument("--model", required=True)
    p.add_argument("--profile", required=True)
    p.add_argument("--seeds", required=True, metavar="IMAGES,LABELS")
    p.add_argument("--criterion", choices=["nc", "kmnc"], default="kmnc")
    p.add_argument("--scorer", choices=["msp", "oe", "maha"], default="oe")
    p.add_argument("--budget", type=int, required=True)
    p.add_argument("--energy", type=int, default=20)
    p.add_argument("--run-seed", type=int, default=0)
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--nc-threshold", type=float, default=0.75)
    p.add_argument("--k-sections", type=int, default=100)
    p.add_argument("--commit-ood-coverage", action="store_true")
    p.add_argument(
        "--unguided-requeue",
        action="store_true",
        help="requeue without the OOD filter (unguided baseline for two-run comparisons)",
    )
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_fuzz)

    p = sub.add_parser("report", help="tabulate a corpus before/after OOD filtering")
    p.add_argument("--corpus", required=True)
    p.add_argument("--view", choices=["before", "after", "both"], default="both")
    p.add_argument("--out")
    p.set_defaults(handler=cmd_report)

    p = sub.add_parser("retrain", help="three-arm retraining experiment")
    p.add_argument("--model", required=True)
    p.add_argument("--train", required=True, metavar="IMAGES,LABELS")
    p.add_argument("--corpus", required=True, help="corpus dir, or comma-separated dirs")
    p.add_argument("--arms", default="random,id,ood")
    p.add_argument("--retrain-count", type=int, default=1000)
    p.add_argument("--holdout-count", type=int, default=200)
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--batch-size", type=int, default=128)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--from-scratch", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_retrain)

    p = sub.add_parser("replay", help="re-materialize a corpus record by id")
    p.add_argument("--corpus", required=True)
    p.add_argument("--id", type=int, required=True)
    p.add_argument("--model", help="also re-run the forward pass")
    p.add_argument("--out")
    p.set_defaults(handler=cmd_replay)

    p = sub.add_parser("logits", help="dump logits for probe images (exporter checks)")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True, metavar="IMAGES[,LABELS]")
    p.add_argument("--count", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(handler=cmd_logits)

    p = sub.add_parser("synth", help="generate synthetic digit IDX datasets")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--train", type=int, default=10_000)
    p.add_argument("--test", type=int, default=2_000)
    p.add_argument("--outliers", type=int, default=2_000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(handler=cmd_synth)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except UsageError as exc:
        _report_error(args, exc)
        return 2
    except ContractError as exc:
        _report_error(args, exc)
        return 3


def _report_error(args, exc: Exception) -> None:
    print(f"error: {exc}", file=sys.stderr)
    if getattr(args, "error_json", None):
        Path(args.error_json).write_text(
            canonical_json({"error": type(exc).__name__, "message": str(exc)}) + "\n",
            encoding="utf-8",
        )


if __name__ == "__main__":
    raise SystemExit(main())

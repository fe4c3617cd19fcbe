"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Run with `pytest tests/test_acceptance.py -v -s` to see the lines as they
complete.  The end-to-end directional experiment (criterion 8) is the slow
one; everything else finishes in seconds.
"""

import filecmp
import math
import time
from types import SimpleNamespace

import numpy as np
import pytest

from oodfuzz.coverage import (
    CoverageConfig,
    CoverageState,
    kmnc_update,
    merge,
    nc_update,
)
from oodfuzz.fuzzer import FuzzConfig, delta_percent, run_fuzz
from oodfuzz.mutation import (
    AFFINE_OPS,
    OPERATORS,
    MutationSpec,
    apply_chain,
    mutate,
    sample_spec,
)
from oodfuzz.ood import MahalanobisParams, mahalanobis_score_features, msp_score_logits
from oodfuzz.profiler import build_profile, nearest_rank_percentile, profile_to_obj
from oodfuzz.runtime import ActivationTrace, Dense, backward
from oodfuzz.synth import make_digit_dataset, make_outlier_dataset
from oodfuzz.trainer import (
    ExperimentSpec,
    TrainConfig,
    evaluate,
    init_mlp,
    oe_train,
    retrain_experiment,
    train,
)
from oodfuzz.model_io import canonical_json


def _verdict(name, ok, elapsed, limit, detail=""):
    status = "PASS" if ok and elapsed < limit else "FAIL"
    print(f"[{status}] {name}  ({elapsed:.1f}s / limit {limit:.0f}s) {detail}")
    assert ok, f"{name}: {detail}"
    assert elapsed < limit, f"{name}: took {elapsed:.1f}s, limit {limit}s"


def _trace(values, sizes):
    return ActivationTrace(
        neuron_values=np.asarray(values, dtype=np.float32),
        logits=np.zeros(2, dtype=np.float32),
        penultimate=np.zeros(1, dtype=np.float32),
        predicted_class=0,
        layer_sizes=tuple(sizes),
    )


def test_accept_coverage_oracle_equivalence():
    """NC and KMNC bitsets match a brute-force oracle on >=50 random instances."""
    start = time.time()
    rng = np.random.default_rng(2024)
    failures = []
    for instance in range(50):
        n_neurons = int(rng.integers(1, 11))
        # random layer split of the neuron vector
        sizes = []
        left = n_neurons
        while left > 0:
            s = int(rng.integers(1, left + 1))
            sizes.append(s)
            left -= s
        k = int(rng.integers(1, 11))
        t = float(rng.uniform(0.2, 0.9))
        low = rng.uniform(-1, 0.4, size=n_neurons).astype(np.float32)
        high = (low + rng.uniform(0, 1.2, size=n_neurons) * (rng.uniform(size=n_neurons) > 0.15)).astype(np.float32)
        profile = SimpleNamespace(low=low, high=high)
        traces = [
            rng.uniform(-1.2, 1.8, size=n_neurons).astype(np.float32)
            for _ in range(int(rng.integers(1, 15)))
        ]

        nc_cfg = CoverageConfig("nc", nc_threshold=t)
        nc_state = CoverageState(nc_cfg, n_neurons)
        km_cfg = CoverageConfig("kmnc", kmnc_sections=k)
        km_state = CoverageState(km_cfg, n_neurons)
        for values in traces:
            nc_update(nc_state, _trace(values, sizes))
            kmnc_update(km_state, _trace(values, sizes), profile)

        # brute-force oracles in plain python
        nc_expected = set()
        km_expected = set()
        for values in traces:
            offset = 0
            for size in sizes:
                seg = [float(v) for v in values[offset : offset + size]]
                lo, hi = min(seg), max(seg)
                for j, v in enumerate(seg):
                    scaled = 0.0 if hi == lo else (v - lo) / (hi - lo)
                    if scaled > t:
                        nc_expected.add(offset + j)
                offset += size
            for i, v in enumerate(values):
                v, lo, hi = float(v), float(low[i]), float(high[i])
                if lo <= v <= hi:
                    sec = 0 if hi == lo else min(math.floor((v - lo) / (hi - lo) * k), k - 1)
                    km_expected.add(i * k + sec)
        if set(np.nonzero(nc_state.bits)[0]) != nc_expected:
            failures.append(f"NC mismatch on instance {instance}")
        if set(np.nonzero(km_state.bits)[0]) != km_expected:
            failures.append(f"KMNC mismatch on instance {instance}")
    _verdict("coverage oracle equivalence (50 instances)", not failures,
             time.time() - start, 10, "; ".join(failures[:3]))


def test_accept_monotonicity_and_merge_laws():
    """Monotone ratios plus exact semilattice laws over 1000 random trials."""
    start = time.time()
    rng = np.random.default_rng(77)
    ok = True
    cfg = CoverageConfig("kmnc", kmnc_sections=5)
    for _ in range(1000):
        n = int(rng.integers(1, 8))

        def rand_state():
            s = CoverageState(cfg, n)
            mask = rng.uniform(size=s.capacity) < rng.uniform(0, 0.6)
            s.bits = mask
            s.covered = int(mask.sum())
            return s

        x, y, z = rand_state(), rand_state(), rand_state()
        empty = CoverageState(cfg, n)
        ok &= np.array_equal(merge(x, empty).bits, x.bits)
        ok &= np.array_equal(merge(x, x).bits, x.bits)
        ok &= np.array_equal(merge(x, y).bits, merge(y, x).bits)
        ok &= np.array_equal(merge(merge(x, y), z).bits, merge(x, merge(y, z)).bits)
        # monotonicity under a random commit
        profile = SimpleNamespace(
            low=np.zeros(n, dtype=np.float32), high=np.ones(n, dtype=np.float32)
        )
        before = x.ratio
        kmnc_update(x, _trace(rng.uniform(-0.5, 1.5, size=n).astype(np.float32), (n,)), profile)
        ok &= x.ratio >= before
        if not ok:
            break
    _verdict("coverage monotonicity + merge semilattice laws (1000 trials)", bool(ok),
             time.time() - start, 10)


def test_accept_percentile_contract():
    start = time.time()
    rng = np.random.default_rng(11)
    ok = True
    for _ in range(600):
        n = int(rng.integers(1, 501))
        scores = rng.normal(0, 1, size=n)
        threshold = nearest_rank_percentile(scores, 99)
        ok &= (np.sum(scores > threshold) / n) <= 0.01
        if not ok:
            break
    exact = nearest_rank_percentile(np.arange(1, 101, dtype=np.float64), 99) == 99.0
    _verdict("percentile/threshold contract", bool(ok and exact), time.time() - start, 5,
             "" if exact else "{1..100} case broke")


def _fd_gradients(net, x, label, step=1e-3):
    def loss():
        value, _ = backward(net, x, labels=label)
        return value

    out = []
    for layer in net.layers:
        if not isinstance(layer, Dense):
            out.append(None)
            continue
        grads = []
        for arr in (layer.weights, layer.bias):
            g = np.zeros_like(arr)
            for idx in np.ndindex(arr.shape):
                orig = arr[idx]
                arr[idx] = orig + step
                up = loss()
                arr[idx] = orig - step
                down = loss()
                arr[idx] = orig
                g[idx] = (up - down) / (2 * step)
            grads.append(g)
        out.append(tuple(grads))
    return out


def test_accept_gradient_check():
    """Analytic vs central finite differences on 20 random MLPs."""
    start = time.time()
    from test_runtime import fd_smooth_cases

    worst = 0.0
    for net, x, label in fd_smooth_cases(20, [4, 5, 4, 3], seed0=500):
        _, analytic = backward(net, x, labels=label)
        numeric = _fd_gradients(net, x, label)
        for a, n in zip(analytic, numeric):
            if a is None:
                continue
            for ga, gn in zip(a, n):
                denom = np.maximum(np.abs(gn), 1e-2)
                worst = max(worst, float((np.abs(ga - gn) / denom).max()))
    _verdict("gradient check (20 random MLPs)", worst < 1e-4, time.time() - start, 30,
             f"worst relative error {worst:.2e}")


def test_accept_scorer_closed_forms():
    start = time.time()
    ok = True
    details = []
    for c in (2, 3, 10):
        got = float(msp_score_logits(np.zeros((1, c)))[0])
        expected = 1.0 - 1.0 / c
        if got != expected:
            ok = False
            details.append(f"uniform MSP C={c}: {got!r} != {expected!r}")
    params = MahalanobisParams(means=np.array([[0.0], [4.0]]), precision=np.array([[1.0]]))
    d1 = float(mahalanobis_score_features(np.array([[1.0]]), params)[0])
    if abs(d1 - 1.0) > 1e-9:
        ok = False
        details.append(f"1-D closed form: {d1}")
    rng = np.random.default_rng(5)
    a = rng.normal(0, 1, size=(3, 3))
    precision = a @ a.T + 2 * np.eye(3)
    means = rng.normal(0, 1, size=(4, 3))
    params3 = MahalanobisParams(means=means, precision=precision)
    worst = 0.0
    for _ in range(50):
        f = rng.normal(0, 2, size=3)
        expected = min(
            sum(
                (f[i] - means[c][i]) * precision[i][j] * (f[j] - means[c][j])
                for i in range(3)
                for j in range(3)
            )
            for c in range(4)
        )
        got = float(mahalanobis_score_features(f[None], params3)[0])
        worst = max(worst, abs(got - expected))
    if worst > 1e-6:
        ok = False
        details.append(f"quadratic form disagreement {worst:.2e}")
    _verdict("scorer closed forms", ok, time.time() - start, 5, "; ".join(details))


def test_accept_report_arithmetic():
    start = time.time()
    d1 = delta_percent(24646, 10983)
    d2 = delta_percent(16370, 16413)
    ok = abs(d1 - 55.44) <= 0.01 and abs(d2 - (-0.26)) <= 0.01
    _verdict("report arithmetic (reference count pairs)", ok, time.time() - start, 1,
             f"got {d1:.4f}% and {d2:.4f}%")


def test_accept_determinism(tmp_path):
    """profile -> fuzz twice with one worker; artifacts byte-identical."""
    start = time.time()
    train_ds = make_digit_dataset(300, rng_seed=41)
    net = init_mlp((28, 28, 1), (32,), 10, rng_seed=41)
    net, _ = train(net, train_ds, TrainConfig(epochs=2, rng_seed=41))
    profiles = []
    for run in ("a", "b"):
        out = tmp_path / run
        out.mkdir()
        profile = build_profile(net, train_ds, scorer_kind="msp", include_mahalanobis=False)
        profiles.append(canonical_json(profile_to_obj(profile)))
        cfg = FuzzConfig(criterion="kmnc", scorer="msp", budget=2000, energy=20,
                         run_seed=99, workers=1)
        run_fuzz(net, profile, train_ds, cfg, out_dir=out)
    identical = profiles[0] == profiles[1]
    for name in ("run.json", "records.jsonl", "coverage.json", "report.json"):
        identical &= filecmp.cmp(tmp_path / "a" / name, tmp_path / "b" / name, shallow=False)
    _verdict("determinism (profile+fuzz, budget 2000, fixed seed)", identical,
             time.time() - start, 120)


def test_accept_mutation_suite():
    start = time.time()
    rng = np.random.default_rng(404)
    image = rng.uniform(0, 1, size=(28, 28, 1)).astype(np.float32)
    ok = True
    details = []

    identity = {
        "translate": {"dx": 0, "dy": 0},
        "rotate": {"degrees": 0.0},
        "scale": {"factor": 1.0},
        "shear": {"factor": 0.0},
        "brightness": {"delta": 0.0},
        "contrast": {"factor": 1.0},
        "blur": {"kernel_size": 1, "sigma": 0.5},
        "noise": {"sigma": 0.0},
    }
    for op in OPERATORS:
        if not np.array_equal(mutate(image, MutationSpec(op, identity[op], rng_seed=5)), image):
            ok = False
            details.append(f"identity broken for {op}")

    for trial in range(1000):
        chain = []
        allow_affine = True
        for _ in range(int(rng.integers(1, 4))):
            spec = sample_spec(rng, allow_affine)
            if spec.operator in AFFINE_OPS:
                allow_affine = False
            chain.append(spec)
        out = apply_chain(image, chain)
        if out.shape != image.shape or out.min() < 0 or out.max() > 1 or not np.all(np.isfinite(out)):
            ok = False
            details.append(f"range violated on trial {trial}")
            break
        if not np.array_equal(out, apply_chain(image, chain)):
            ok = False
            details.append(f"replay mismatch on trial {trial}")
            break
    _verdict("mutation suite (identities, range safety, 1000 chain replays)", ok,
             time.time() - start, 30, "; ".join(details[:3]))


@pytest.mark.slow
def test_accept_end_to_end_directional():
    """Desk-scale directional reproduction of the filtering + retraining claims."""
    start = time.time()
    train_ds = make_digit_dataset(10_000, rng_seed=0)
    test_ds = make_digit_dataset(2_000, rng_seed=1)
    outliers = make_outlier_dataset(2_000, rng_seed=2)

    net0 = init_mlp((28, 28, 1), (128, 64), 10, rng_seed=7)
    base, _ = train(net0, train_ds, TrainConfig(epochs=12, rng_seed=7))
    base_acc = evaluate(base, test_ds)
    print(f"  base model test accuracy: {base_acc:.4f}")
    assert base_acc >= 0.95, f"base accuracy {base_acc} below 0.95"

    oe_net, _ = oe_train(
        net0, train_ds, outliers,
        TrainConfig(epochs=6, learning_rate=0.1, rng_seed=7, oe_lambda=0.2),
    )
    profile = build_profile(oe_net, train_ds, scorer_kind="oe")
    seeds = train_ds.subset(np.arange(1000))

    orderings = []
    for run_seed in (7, 17, 27):
        cfg = FuzzConfig(criterion="kmnc", scorer="oe", budget=50_000, energy=20,
                         run_seed=run_seed)
        result = run_fuzz(oe_net, profile, seeds, cfg)
        errors = [r for r in result.records if r.outcome.kind == "error"]
        benign = [r for r in result.records if r.outcome.kind == "benign_gain"]
        error_ood_fraction = float(np.mean([r.outcome.is_ood for r in errors]))
        benign_ood_fraction = float(np.mean([r.outcome.is_ood for r in benign]))
        # (a) the filter flags some errors, and not half the benign gains
        assert error_ood_fraction > 0.0, "no error was flagged OOD"
        assert benign_ood_fraction < 0.5, f"benign OOD fraction {benign_ood_fraction}"

        spec = ExperimentSpec(
            retrain_error_count=1000,
            holdout_error_count=200,
            train_config=TrainConfig(epochs=5, learning_rate=0.05, rng_seed=run_seed + 2),
            rng_seed=run_seed + 2,
        )
        results = retrain_experiment(oe_net, train_ds, result.records, seeds, spec)
        arms = {arm: row["accuracy"] for arm, row in results["arms"].items()}
        ordered = arms["id_only"] > arms["ood_only"] and arms["random"] > arms["ood_only"]
        orderings.append(ordered)
        print(
            f"  rep run_seed={run_seed}: errors={len(errors)} "
            f"(ood {error_ood_fraction:.1%}), benign_gain={len(benign)} "
            f"(ood {benign_ood_fraction:.1%}), arms={ {a: round(v, 3) for a, v in arms.items()} } "
            f"ordering={'ok' if ordered else 'violated'}"
        )

    elapsed = time.time() - start
    ok = sum(orderings) >= 2
    _verdict("end-to-end directional experiment (3 seeded repetitions)", ok, elapsed, 1800,
             f"ordering held in {sum(orderings)}/3 repetitions")

"""Mini-batch SGD training for dense networks, outlier-exposure training,
and the three-arm retraining experiment.

Retraining fine-tunes from the base model's weights by default (the
comparison between arms is what matters; from-scratch is a flag).  Error
cases keep their seed labels as ground truth, including in the ood_only
arm: training on out-of-distribution inputs with inherited labels is
exactly the failure mode the experiment measures.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import HoldoutOverlapError, UsageError
from .fuzzer import replay_record, select_errors
from .model_io import Dataset, json_fingerprint
from .runtime import Dense, Flatten, Network, Relu, backward, check_trainable, forward_trace_batch

ARM_ORDER = {"random": 0, "id_only": 1, "ood_only": 2}


@dataclass
class TrainConfig:
    epochs: int = 5
    batch_size: int = 128
    learning_rate: float = 0.1
    momentum: float = 0.9
    rng_seed: int = 0
    oe_lambda: float = 0.5

    def __post_init__(self):
        if self.epochs < 0:
            raise UsageError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise UsageError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate < 0:
            raise UsageError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if not 0 <= self.momentum < 1:
            raise UsageError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.oe_lambda < 0:
            raise UsageError(f"oe_lambda must be >= 0, got {self.oe_lambda}")


def _as_arrays(data) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(data, Dataset):
        return data.to_float(), data.labels
    images, labels = data
    return np.asarray(images, dtype=np.float32), np.asarray(labels, dtype=np.int64)


def _as_images(data) -> np.ndarray:
    if isinstance(data, Dataset):
        return data.to_float()
    return np.asarray(data, dtype=np.float32)


def init_mlp(
    input_shape, hidden: tuple[int, ...], class_count: int, rng_seed: int = 0
) -> Network:
    """He-initialized flatten + dense/relu stack ending in a logits layer."""
    rng = np.random.default_rng(rng_seed)
    input_shape = tuple(int(d) for d in input_shape)
    sizes = [int(np.prod(input_shape))] + [int(h) for h in hidden] + [int(class_count)]
    layers: list = []
    if len(input_shape) > 1:
        layers.append(Flatten())
    for i in range(len(sizes) - 1):
        fan_in, fan_out = sizes[i], sizes[i + 1]
        w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_out, fan_in)).astype(np.float32)
        layers.append(Dense(w, np.zeros(fan_out, dtype=np.float32)))
        if i < len(sizes) - 2:
            layers.append(Relu())
    return Network(layers, input_shape, class_count)


def reinit_like(net: Network, rng_seed: int = 0) -> Network:
    """Fresh He init with the same architecture (for from-scratch retraining)."""
    rng = np.random.default_rng(rng_seed)
    out = net.copy()
    for layer in out.layers:
        if isinstance(layer, Dense):
            fan_in = layer.weights.shape[1]
            layer.weights[...] = rng.normal(
                0.0, np.sqrt(2.0 / fan_in), size=layer.weights.shape
            ).astype(np.float32)
            layer.bias[...] = 0.0
    return out


def _sgd_step(net: Network, velocity, grads, lr: float, momentum: float):
    for i, g in enumerate(grads):
        if g is None:
            continue
        dw, db = g
        vw, vb = velocity[i]
        vw *= momentum
        vw -= lr * dw
        vb *= momentum
        vb -= lr * db
        layer = net.layers[i]
        layer.weights += vw
        layer.bias += vb


def _init_velocity(net: Network):
    return [
        (np.zeros_like(l.weights), np.zeros_like(l.bias)) if isinstance(l, Dense) else None
        for l in net.layers
    ]


def train(net: Network, data, cfg: TrainConfig) -> tuple[Network, list[float]]:
    """SGD with momentum on mean cross-entropy; returns (net, per-epoch loss).

    `data` is a Dataset or an (images, labels) pair of arrays with images
    already in [0, 1].  Deterministic given cfg.rng_seed.
    """
    check_trainable(net)
    images, labels = _as_arrays(data)
    n = len(images)
    if n == 0:
        raise UsageError("training dataset is empty")
    net = net.copy()
    velocity = _init_velocity(net)
    rng = np.random.default_rng(cfg.rng_seed)
    losses = []
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            loss, grads = backward(net, images[idx], labels[idx])
            _sgd_step(net, velocity, grads, cfg.learning_rate, cfg.momentum)
            epoch_loss += loss * len(idx)
        losses.append(epoch_loss / n)
    return net, losses


def oe_train(net: Network, data, outliers, cfg: TrainConfig) -> tuple[Network, list[float]]:
    """Outlier-exposure training: CE(train) + lambda * CE-to-uniform(outliers).

    Outlier labels are ignored.  With oe_lambda == 0 this is exactly
    train() under the same seed: the in-distribution shuffle stream is
    shared and the outlier stream is drawn from a separate generator.
    """
    if cfg.oe_lambda == 0:
        return train(net, data, cfg)
    check_trainable(net)
    images, labels = _as_arrays(data)
    outlier_images = _as_images(outliers)
    n = len(images)
    n_out = len(outlier_images)
    if n == 0:
        raise UsageError("training dataset is empty")
    if n_out == 0:
        raise UsageError("outlier dataset is empty")
    net = net.copy()
    velocity = _init_velocity(net)
    rng = np.random.default_rng(cfg.rng_seed)
    out_rng = np.random.default_rng([cfg.rng_seed, 1])
    uniform_row = np.full(net.class_count, 1.0 / net.class_count, dtype=np.float32)
    losses = []
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            loss_id, grads_id = backward(net, images[idx], labels[idx])
            out_idx = out_rng.integers(0, n_out, size=len(idx))
            targets = np.tile(uniform_row, (len(out_idx), 1))
            loss_oe, grads_oe = backward(
                net, outlier_images[out_idx], target_probs=targets
            )
            combined = []
            for g_id, g_oe in zip(grads_id, grads_oe):
                if g_id is None:
                    combined.append(None)
                else:
                    combined.append(
                        (
                            g_id[0] + cfg.oe_lambda * g_oe[0],
                            g_id[1] + cfg.oe_lambda * g_oe[1],
                        )
                    )
            _sgd_step(net, velocity, combined, cfg.learning_rate, cfg.momentum)
            epoch_loss += (loss_id + cfg.oe_lambda * loss_oe) * len(idx)
        losses.append(epoch_loss / n)
    return net, losses


def evaluate(net: Network, data, batch_size: int = 512) -> float:
    """Classification accuracy on a Dataset or (images, labels) pair."""
    images, labels = _as_arrays(data)
    if len(images) == 0:
        raise UsageError("evaluation dataset is empty")
    correct = 0
    for start in range(0, len(images), batch_size):
        batch = images[start : start + batch_size]
        preds = forward_trace_batch(net, batch).predicted_class
        correct += int((preds == labels[start : start + len(batch)]).sum())
    return correct / len(images)


@dataclass
class ExperimentSpec:
    arms: tuple[str, ...] = ("random", "id_only", "ood_only")
    retrain_error_count: int = 1000
    holdout_error_count: int = 200
    train_config: TrainConfig = field(default_factory=TrainConfig)
    rng_seed: int = 0
    from_scratch: bool = False
    holdout_ids: tuple[int, ...] | None = None  # explicit holdout, else random sample

    def __post_init__(self):
        for arm in self.arms:
            if arm not in ARM_ORDER:
                raise UsageError(f"unknown arm {arm!r}, expected one of {tuple(ARM_ORDER)}")
        if self.retrain_error_count < 1:
            raise UsageError("retrain_error_count must be >= 1")
        if self.holdout_error_count < 1:
            raise UsageError("holdout_error_count must be >= 1")


def retrain_experiment(
    base_net: Network,
    train_data,
    records,
    seeds: Dataset,
    spec: ExperimentSpec,
) -> dict:
    """Retrain per arm on train + selected errors; evaluate on the holdout.

    The holdout is a fixed set of error cases (ids supplied explicitly or
    sampled at random), disjoint by id from every arm's retraining errors.
    Each arm keeps the errors' seed labels as ground truth.
    """
    errors = [r for r in records if r.outcome.kind == "error"]
    rng = np.random.default_rng(spec.rng_seed)

    if spec.holdout_ids is not None:
        by_id = {r.id: r for r in errors}
        missing = [i for i in spec.holdout_ids if i not in by_id]
        if missing:
            raise UsageError(f"holdout ids not found among corpus errors: {missing[:5]}")
        holdout = sorted((by_id[i] for i in spec.holdout_ids), key=lambda r: r.id)
        holdout_policy = "provided"
    else:
        if len(errors) < spec.holdout_error_count:
            raise UsageError(
                f"corpus has {len(errors)} errors, holdout needs {spec.holdout_error_count}"
            )
        chosen = rng.choice(len(errors), size=spec.holdout_error_count, replace=False)
        holdout = sorted((errors[i] for i in chosen), key=lambda r: r.id)
        holdout_policy = "random_sample"
    holdout_ids = {r.id for r in holdout}

    holdout_images = np.stack([replay_record(r, seeds) for r in holdout])
    holdout_labels = np.asarray([r.seed_label for r in holdout], dtype=np.int64)
    holdout_data = (holdout_images, holdout_labels)

    train_images, train_labels = _as_arrays(train_data)

    arms_result = {}
    for arm in spec.arms:
        arm_rng = np.random.default_rng([spec.rng_seed, ARM_ORDER[arm]])
        chosen = select_errors(
            records, arm, spec.retrain_error_count, arm_rng, exclude_ids=holdout_ids
        )
        overlap = holdout_ids.intersection(r.id for r in chosen)
        if overlap:
            raise HoldoutOverlapError(f"arm {arm!r} overlaps holdout on ids {sorted(overlap)[:5]}")
        arm_images = np.stack([replay_record(r, seeds) for r in chosen])
        arm_labels = np.asarray([r.seed_label for r in chosen], dtype=np.int64)
        augmented = (
            np.concatenate([train_images, arm_images]),
            np.concatenate([train_labels, arm_labels]),
        )
        start_net = (
            reinit_like(base_net, spec.rng_seed) if spec.from_scratch else base_net
        )
        retrained, losses = train(start_net, augmented, spec.train_config)
        arms_result[arm] = {
            "accuracy": evaluate(retrained, holdout_data),
            "retrain_count": len(chosen),
            "final_loss": losses[-1] if losses else None,
            "ood_fraction": float(np.mean([r.outcome.is_ood for r in chosen])),
        }

    config = {
        "retrain_error_count": spec.retrain_error_count,
        "holdout_error_count": spec.holdout_error_count,
        "epochs": spec.train_config.epochs,
        "batch_size": spec.train_config.batch_size,
        "learning_rate": spec.train_config.learning_rate,
        "momentum": spec.train_config.momentum,
        "rng_seed": spec.rng_seed,
        "from_scratch": spec.from_scratch,
        "arms": list(spec.arms),
    }
    return {
        "holdout": {
            "count": len(holdout),
            "policy": holdout_policy,
            "ids": sorted(holdout_ids),
            "ood_fraction": float(np.mean([r.outcome.is_ood for r in holdout])),
        },
        "base_accuracy": evaluate(base_net, holdout_data),
        "arms": arms_result,
        "config": config,
        "config_fingerprint": json_fingerprint(config),
    }

"""OOD-guided coverage fuzzing for feed-forward image classifiers."""

__version__ = "0.1.0"

from .coverage import CoverageConfig, CoverageState, coverage_gain, kmnc_update, merge, nc_update
from .errors import ContractError, EngineError, UsageError
from .fuzzer import FuzzConfig, classify, export_errors, load_corpus, make_report, run_fuzz
from .model_io import Dataset, load_dataset, load_model, save_dataset, save_model
from .mutation import MutationSpec, check_validity, mutate, sample_spec
from .ood import OodScorer, OodVerdict, is_ood, mahalanobis_score, msp_score, oe_score
from .profiler import Profile, build_profile, load_profile, save_profile
from .runtime import ActivationTrace, Network, backward, forward_trace, forward_trace_batch, softmax
from .trainer import ExperimentSpec, TrainConfig, evaluate, init_mlp, oe_train, retrain_experiment, train

__all__ = [
    "ActivationTrace",
    "ContractError",
    "CoverageConfig",
    "CoverageState",
    "Dataset",
    "EngineError",
    "ExperimentSpec",
    "FuzzConfig",
    "MutationSpec",
    "Network",
    "OodScorer",
    "OodVerdict",
    "Profile",
    "TrainConfig",
    "UsageError",
    "backward",
    "build_profile",
    "check_validity",
    "classify",
    "coverage_gain",
    "evaluate",
    "export_errors",
    "forward_trace",
    "forward_trace_batch",
    "init_mlp",
    "is_ood",
    "kmnc_update",
    "load_corpus",
    "load_dataset",
    "load_model",
    "load_profile",
    "mahalanobis_score",
    "make_report",
    "merge",
    "msp_score",
    "mutate",
    "nc_update",
    "oe_score",
    "oe_train",
    "retrain_experiment",
    "run_fuzz",
    "sample_spec",
    "save_dataset",
    "save_model",
    "save_profile",
    "softmax",
    "train",
]

"""Desk-scale federated averaging simulator with differential privacy."""

__version__ = "0.1.0"

from .accountant import AccountantState, compose_and_convert, epsilon_curve, rdp_subsampled_gaussian
from .backprop import evaluate, forward_backward, per_sample_grads
from .data import ClientShard, Dataset, PartitionScheme, generate_synthetic, load_dataset, partition
from .dp import PrivacyConfig, clip, dp_sgd_batch_grad, noise_aggregate
from .engine import RoundConfig, RoundRecord, aggregate, client_update, run_training, sample_clients
from .models import ModelSpec, build_mlp, build_cnn, init_params
from .params import ParamVector

__all__ = [
    "AccountantState", "ClientShard", "Dataset", "ModelSpec", "ParamVector", "PartitionScheme",
    "PrivacyConfig", "RoundConfig", "RoundRecord", "aggregate", "build_mlp", "build_cnn",
    "client_update", "clip", "compose_and_convert", "dp_sgd_batch_grad", "epsilon_curve", "evaluate",
    "forward_backward", "generate_synthetic", "init_params", "load_dataset", "noise_aggregate",
    "partition", "per_sample_grads", "rdp_subsampled_gaussian", "run_training", "sample_clients",
]

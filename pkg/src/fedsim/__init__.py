"""Deterministic federated-learning simulator on synthetic and CSV datasets.

Core pieces: non-IID client synthesis (Dirichlet-mixed class distributions,
label shards), a distribution-distance report, federated averaging with
optional server momentum, importance-reweighted client losses, virtual
clients, and a config-driven sweep harness. Same seed, same bytes out.
"""

from .backend import backend_name
from .data import (
    ClassDistribution,
    Dataset,
    class_histogram,
    generate_blobs,
    load_csv,
    save_csv,
    take_subset,
)
from .engine import (
    ClientUpdate,
    FedConfig,
    RoundRecord,
    ServerState,
    TargetDistribution,
    aggregate,
    client_update,
    importance_weights,
    load_checkpoint,
    read_round_records,
    run_training,
    save_checkpoint,
    select_clients_uniform,
    select_clients_weighted,
    server_step,
    write_round_records,
)
from .errors import (
    DataFormatError,
    FedsimError,
    NumericError,
    ParameterError,
    PartitionInfeasibleError,
    ProtocolError,
)
from .experiments import (
    ExperimentConfig,
    load_config,
    report_milestones,
    run_sweep,
    train_centralized,
)
from .metrics import (
    NonIdenticalnessReport,
    effective_learning_rate,
    emd,
    non_identicalness,
    population_distribution,
    relative_accuracy,
    save_report,
)
from .models import (
    Batch,
    ModelParams,
    ModelSpec,
    evaluate,
    fd_check,
    forward_loss,
    gradient,
    init_model,
    load_params,
    logits,
    loss_and_gradient,
    save_params,
    sgd_step,
)
from .partition import (
    ClientPartition,
    DirichletSpec,
    load_partition,
    partition_by_sizes,
    partition_dirichlet,
    partition_manual,
    partition_shards,
    renormalize_exhausted,
    sample_dirichlet,
    save_partition,
)
from .rng import seed_sequence, stream

__version__ = "0.1.0"

__all__ = [
    "Batch",
    "ClassDistribution",
    "ClientPartition",
    "ClientUpdate",
    "DataFormatError",
    "Dataset",
    "DirichletSpec",
    "ExperimentConfig",
    "FedConfig",
    "FedsimError",
    "ModelParams",
    "ModelSpec",
    "NonIdenticalnessReport",
    "NumericError",
    "ParameterError",
    "PartitionInfeasibleError",
    "ProtocolError",
    "RoundRecord",
    "ServerState",
    "TargetDistribution",
    "aggregate",
    "backend_name",
    "class_histogram",
    "take_subset",
    "client_update",
    "effective_learning_rate",
    "emd",
    "evaluate",
    "fd_check",
    "forward_loss",
    "generate_blobs",
    "gradient",
    "importance_weights",
    "init_model",
    "load_checkpoint",
    "load_config",
    "load_csv",
    "load_params",
    "load_partition",
    "logits",
    "loss_and_gradient",
    "non_identicalness",
    "partition_by_sizes",
    "partition_dirichlet",
    "partition_manual",
    "partition_shards",
    "population_distribution",
    "read_round_records",
    "relative_accuracy",
    "renormalize_exhausted",
    "report_milestones",
    "run_sweep",
    "run_training",
    "sample_dirichlet",
    "save_checkpoint",
    "save_csv",
    "save_params",
    "save_partition",
    "save_report",
    "seed_sequence",
    "select_clients_uniform",
    "select_clients_weighted",
    "server_step",
    "sgd_step",
    "stream",
    "train_centralized",
    "write_round_records",
]

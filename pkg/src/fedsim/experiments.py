"""Experiment driver: config parsing, centralized baseline, sweeps, milestones.

A sweep crosses the axis grids (alpha, report_goal, local_epochs, eta_eff,
beta, algorithm), builds a freshly seeded partition per grid point, trains,
and appends one summary row per point as it finishes. Reruns skip points
already recorded, so an interrupted sweep resumes where it stopped; the
summary file is rewritten in sorted key order at the end, which makes resumed
and from-scratch runs byte-identical.

Config files are TOML with a ``schema_version`` field; see README for the
documented schema.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass
from itertools import product

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib

import numpy as np

from .data import Dataset, generate_blobs, load_csv, take_subset
from .engine import (
    FedConfig,
    RoundRecord,
    _epoch_batches,
    run_training,
    write_round_records,
)
from .errors import FedsimError, NumericError, ParameterError
from .metrics import non_identicalness, relative_accuracy
from .models import (
    Batch,
    MODEL_KINDS,
    ModelParams,
    ModelSpec,
    evaluate,
    init_model,
    loss_and_gradient,
)
from .partition import (
    ClientPartition,
    DirichletSpec,
    load_partition,
    partition_dirichlet,
    partition_shards,
)
from .rng import seed_sequence, stream

SCHEMA_VERSION = 1

ALGORITHMS = ("fedavg", "fedavgm", "fedir", "fedvc")

MILESTONE_THRESHOLDS = (0.1, 0.5, 0.9)


def _take(table: dict, context: str, required: dict, optional: dict) -> dict:
    """Validate a config table against typed required/optional key maps."""
    unknown = sorted(set(table) - set(required) - set(optional))
    if unknown:
        raise ParameterError(f"{context}: unknown keys {unknown}")
    out = {}
    for key, kind in required.items():
        if key not in table:
            raise ParameterError(f"{context}: missing required key {key!r}")
        out[key] = _coerce(table[key], kind, f"{context}.{key}")
    for key, (kind, default) in optional.items():
        out[key] = _coerce(table[key], kind, f"{context}.{key}") if key in table else default
    return out


def _coerce(value, kind, context: str):
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ParameterError(f"{context}: expected a number, got {value!r}")
        return float(value)
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ParameterError(f"{context}: expected an integer, got {value!r}")
        return value
    if kind is str:
        if not isinstance(value, str):
            raise ParameterError(f"{context}: expected a string, got {value!r}")
        return value
    if kind is dict:
        if not isinstance(value, dict):
            raise ParameterError(f"{context}: expected a table")
        return value
    # list kinds arrive as (list, element_type)
    outer, inner = kind
    if not isinstance(value, list) or not value:
        raise ParameterError(f"{context}: expected a non-empty list")
    return tuple(_coerce(v, inner, context) for v in value)


@dataclass(frozen=True)
class DatasetPlan:
    source: str
    num_classes: int = 0
    per_class: int = 0
    feature_dim: int = 0
    spread: float = 1.0
    eval_per_class: int = 0
    path: str = ""
    eval_path: str = ""

    @staticmethod
    def from_table(table: dict) -> "DatasetPlan":
        source = table.get("source")
        if source == "blobs":
            got = _take(
                table,
                "[dataset]",
                {"source": str, "num_classes": int, "per_class": int, "feature_dim": int},
                {"spread": (float, 1.0), "eval_per_class": (int, 0)},
            )
        elif source == "csv":
            got = _take(
                table,
                "[dataset]",
                {"source": str, "path": str},
                {"num_classes": (int, 0), "eval_path": (str, "")},
            )
        else:
            raise ParameterError(f"[dataset].source must be 'blobs' or 'csv', got {source!r}")
        return DatasetPlan(**got)

    def build(self, seed: int) -> tuple[Dataset, Dataset | None]:
        if self.source == "blobs":
            if self.eval_per_class == 0:
                return generate_blobs(
                    self.num_classes, self.per_class, self.feature_dim, self.spread, seed
                ), None
            # Draw one pool per class and split it, so the held-out examples
            # come from the same class means as the training ones.
            block = self.per_class + self.eval_per_class
            pool = generate_blobs(self.num_classes, block, self.feature_dim, self.spread, seed)
            rows = np.arange(pool.num_examples).reshape(self.num_classes, block)
            train = take_subset(pool, rows[:, : self.per_class].ravel())
            held_out = take_subset(pool, rows[:, self.per_class :].ravel())
            return train, held_out
        train = load_csv(self.path, self.num_classes or None)
        held_out = load_csv(self.eval_path, train.num_classes) if self.eval_path else None
        return train, held_out


@dataclass(frozen=True)
class PartitionPlan:
    kind: str
    num_clients: int = 0
    samples_per_client: int = 0
    shards_per_client: int = 0
    path: str = ""

    @staticmethod
    def from_table(table: dict) -> "PartitionPlan":
        kind = table.get("kind")
        if kind == "dirichlet":
            got = _take(
                table,
                "[partition]",
                {"kind": str, "num_clients": int, "samples_per_client": int},
                {},
            )
        elif kind == "shards":
            got = _take(
                table,
                "[partition]",
                {"kind": str, "num_clients": int, "shards_per_client": int},
                {},
            )
        elif kind == "manual":
            got = _take(table, "[partition]", {"kind": str, "path": str}, {})
        else:
            raise ParameterError(
                f"[partition].kind must be 'dirichlet', 'shards' or 'manual', got {kind!r}"
            )
        return PartitionPlan(**got)

    def build(self, dataset: Dataset, alpha: float, seed: int) -> ClientPartition:
        if self.kind == "dirichlet":
            spec = DirichletSpec(
                alpha=alpha,
                num_clients=self.num_clients,
                samples_per_client=self.samples_per_client,
                seed=seed,
            )
            return partition_dirichlet(dataset, spec)
        if self.kind == "shards":
            rng = stream(seed, "shard-partition")
            return partition_shards(dataset, self.num_clients, self.shards_per_client, rng)
        return load_partition(self.path, dataset)


@dataclass(frozen=True)
class ModelPlan:
    kind: str
    hidden_dim: int = 0
    weight_decay: float = 0.0
    init_scale: float = 0.05

    @staticmethod
    def from_table(table: dict) -> "ModelPlan":
        got = _take(
            table,
            "[model]",
            {"kind": str},
            {"hidden_dim": (int, 0), "weight_decay": (float, 0.0), "init_scale": (float, 0.05)},
        )
        if got["kind"] not in MODEL_KINDS:
            raise ParameterError(f"[model].kind must be one of {MODEL_KINDS}, got {got['kind']!r}")
        return ModelPlan(**got)

    def spec_for(self, dataset: Dataset, init_seed: int) -> ModelSpec:
        return ModelSpec(
            kind=self.kind,
            feature_dim=dataset.feature_dim,
            num_classes=dataset.num_classes,
            hidden_dim=self.hidden_dim,
            weight_decay=self.weight_decay,
            init_scale=self.init_scale,
            init_seed=init_seed,
        )


@dataclass(frozen=True)
class FederatedPlan:
    rounds: int
    batch_size: int
    eval_interval: int = 10
    virtual_size: int = 0

    @staticmethod
    def from_table(table: dict) -> "FederatedPlan":
        got = _take(
            table,
            "[federated]",
            {"rounds": int, "batch_size": int},
            {"eval_interval": (int, 10), "virtual_size": (int, 0)},
        )
        return FederatedPlan(**got)


@dataclass(frozen=True)
class CentralizedPlan:
    lr: float
    steps: int
    batch_size: int

    @staticmethod
    def from_table(table: dict) -> "CentralizedPlan":
        got = _take(
            table, "[centralized]", {"lr": float, "steps": int, "batch_size": int}, {}
        )
        return CentralizedPlan(**got)


@dataclass(frozen=True)
class SweepAxes:
    alpha: tuple[float, ...]
    report_goal: tuple[int, ...]
    local_epochs: tuple[float, ...]
    eta_eff: tuple[float, ...]
    beta: tuple[float, ...]
    algorithms: tuple[str, ...]

    @staticmethod
    def from_table(table: dict) -> "SweepAxes":
        got = _take(
            table,
            "[sweep]",
            {
                "alpha": (list, float),
                "report_goal": (list, int),
                "local_epochs": (list, float),
                "eta_eff": (list, float),
                "beta": (list, float),
                "algorithms": (list, str),
            },
            {},
        )
        axes = SweepAxes(**got)
        for algorithm in axes.algorithms:
            if algorithm not in ALGORITHMS:
                raise ParameterError(
                    f"[sweep].algorithms entries must be among {ALGORITHMS}, got {algorithm!r}"
                )
        for beta in axes.beta:
            if not 0.0 <= beta < 1.0:
                raise ParameterError(f"[sweep].beta values must lie in [0, 1), got {beta}")
        return axes


@dataclass(frozen=True)
class ExperimentConfig:
    schema_version: int
    seed: int
    output_dir: str
    dataset: DatasetPlan
    partition: PartitionPlan
    model: ModelPlan
    federated: FederatedPlan
    centralized: CentralizedPlan
    sweep: SweepAxes


def load_config(path) -> ExperimentConfig:
    """Parse and validate a TOML experiment file."""
    with open(path, "rb") as fh:
        try:
            raw = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ParameterError(f"{path}: invalid TOML: {exc}") from None
    top = _take(
        raw,
        "config",
        {
            "schema_version": int,
            "output_dir": str,
            "dataset": dict,
            "partition": dict,
            "model": dict,
            "federated": dict,
            "centralized": dict,
            "sweep": dict,
        },
        {"seed": (int, 0)},
    )
    if top["schema_version"] != SCHEMA_VERSION:
        raise ParameterError(
            f"{path}: schema_version {top['schema_version']} unsupported (expected {SCHEMA_VERSION})"
        )
    return ExperimentConfig(
        schema_version=top["schema_version"],
        seed=top["seed"],
        output_dir=top["output_dir"],
        dataset=DatasetPlan.from_table(top["dataset"]),
        partition=PartitionPlan.from_table(top["partition"]),
        model=ModelPlan.from_table(top["model"]),
        federated=FederatedPlan.from_table(top["federated"]),
        centralized=CentralizedPlan.from_table(top["centralized"]),
        sweep=SweepAxes.from_table(top["sweep"]),
    )


def train_centralized(
    dataset: Dataset,
    model_spec: ModelSpec,
    lr: float,
    steps: int,
    batch_size: int,
    seed: int,
    eval_dataset: Dataset | None = None,
) -> tuple[ModelParams, float]:
    """Plain shuffled minibatch SGD on the pooled data; the baseline for
    relative accuracy."""
    if lr <= 0:
        raise ParameterError("learning rate must be positive")
    if steps < 0 or batch_size < 1:
        raise ParameterError("steps must be non-negative and batch_size positive")
    params = init_model(model_spec)
    rng = stream(seed, "centralized-order")
    for step, positions in enumerate(
        _epoch_batches(dataset.num_examples, batch_size, steps, rng)
    ):
        loss, _, grad = loss_and_gradient(
            params, dataset, Batch(positions), model_spec.weight_decay
        )
        if not np.isfinite(loss) or not np.isfinite(grad).all():
            raise NumericError(f"centralized training diverged at step {step} (loss={loss})")
        params.flat -= lr * grad
    accuracy = evaluate(params, eval_dataset if eval_dataset is not None else dataset)
    return params, accuracy


def report_milestones(
    records: list[RoundRecord],
    thresholds: list[float],
    centralized_accuracy: float,
) -> list[tuple[float, int | None]]:
    """First round whose relative accuracy meets each threshold (None if never)."""
    if not records:
        raise ParameterError("round records must be non-empty")
    if centralized_accuracy <= 0:
        raise ParameterError("centralized accuracy must be positive")
    evaluated = [
        (r.round, r.eval_accuracy / centralized_accuracy)
        for r in records
        if r.eval_accuracy is not None
    ]
    out = []
    for threshold in thresholds:
        hit = next((rnd for rnd, rel in evaluated if rel >= threshold), None)
        out.append((float(threshold), hit))
    return out


def _milestone_column(threshold: float) -> str:
    return f"rounds_to_{threshold * 100:g}pct"


SWEEP_KEY_COLUMNS = ["alpha", "report_goal", "local_epochs", "eta_eff", "beta", "algorithm"]

SWEEP_VALUE_COLUMNS = ["emd", "status", "best_accuracy", "relative_accuracy"] + [
    _milestone_column(t) for t in MILESTONE_THRESHOLDS
]


def _point_key(alpha: float, k: int, epochs: float, eta_eff: float, beta: float, algorithm: str):
    return (repr(float(alpha)), str(int(k)), repr(float(epochs)), repr(float(eta_eff)),
            repr(float(beta)), algorithm)


def _fed_config(
    plan: FederatedPlan, k: int, epochs: float, eta_eff: float, beta: float,
    algorithm: str, seed: int,
) -> FedConfig:
    if algorithm == "fedvc" and plan.virtual_size < 1:
        raise ParameterError("fedvc requires [federated].virtual_size")
    momentum = beta if algorithm == "fedavgm" else 0.0
    return FedConfig(
        rounds=plan.rounds,
        report_goal=k,
        batch_size=plan.batch_size,
        client_lr=eta_eff * (1.0 - momentum),
        server_lr=1.0,
        momentum=momentum,
        local_epochs=epochs,
        virtual_size=plan.virtual_size if algorithm == "fedvc" else None,
        use_fedir=algorithm == "fedir",
        use_fedvc=algorithm == "fedvc",
        seed=seed,
        eval_interval=plan.eval_interval,
    )


def _read_summary(path) -> list[dict]:
    if not os.path.exists(path):
        return []
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _write_summary(path, rows: list[dict]) -> None:
    header = SWEEP_KEY_COLUMNS + SWEEP_VALUE_COLUMNS
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=header)
        writer.writeheader()
        writer.writerows(rows)


def _sort_rows(rows: list[dict]) -> list[dict]:
    def order(row):
        return (
            float(row["alpha"]),
            int(row["report_goal"]),
            float(row["local_epochs"]),
            float(row["eta_eff"]),
            float(row["beta"]),
            row["algorithm"],
        )

    return sorted(rows, key=order)


def run_sweep(config: ExperimentConfig) -> list[dict]:
    """Run every grid point, appending rows as they finish; returns the final
    sorted summary rows.

    Points whose key already appears in the summary file are skipped, even
    failed ones; delete the row (or the file) to force a rerun. Failures are
    recorded in the status column and do not stop the sweep.
    """
    os.makedirs(config.output_dir, exist_ok=True)
    summary_path = os.path.join(config.output_dir, "sweep_results.csv")
    rows = _read_summary(summary_path)
    done = {tuple(row[c] for c in SWEEP_KEY_COLUMNS) for row in rows}

    dataset, held_out = config.dataset.build(config.seed)
    baseline_spec = config.model.spec_for(dataset, init_seed=config.seed)
    _, centralized_acc = train_centralized(
        dataset,
        baseline_spec,
        config.centralized.lr,
        config.centralized.steps,
        config.centralized.batch_size,
        config.seed,
        eval_dataset=held_out,
    )

    axes = config.sweep
    for alpha, k, epochs, eta_eff, algorithm in product(
        axes.alpha, axes.report_goal, axes.local_epochs, axes.eta_eff, axes.algorithms
    ):
        # The beta axis only distinguishes momentum runs; other algorithms
        # would repeat the same run once per beta value.
        betas = axes.beta if algorithm == "fedavgm" else (0.0,)
        for beta in betas:
            key = _point_key(alpha, k, epochs, eta_eff, beta, algorithm)
            if key in done:
                continue
            row = dict(zip(SWEEP_KEY_COLUMNS, key))
            point_seed = int(seed_sequence(config.seed, "sweep-point", *key).generate_state(1)[0])
            try:
                partition = config.partition.build(dataset, alpha, point_seed)
                row["emd"] = repr(non_identicalness(partition).weighted_average)
                fed = _fed_config(config.federated, k, epochs, eta_eff, beta, algorithm, point_seed)
                model_spec = config.model.spec_for(dataset, init_seed=point_seed)
                _, records = run_training(
                    dataset, partition, model_spec, fed, eval_dataset=held_out
                )
                write_round_records(
                    records,
                    os.path.join(config.output_dir, "rounds_" + "_".join(key) + ".csv"),
                )
                best = max(r.eval_accuracy for r in records if r.eval_accuracy is not None)
                row["status"] = "ok"
                row["best_accuracy"] = repr(best)
                row["relative_accuracy"] = repr(relative_accuracy(best, centralized_acc))
                milestones = report_milestones(records, list(MILESTONE_THRESHOLDS), centralized_acc)
                for threshold, rnd in milestones:
                    row[_milestone_column(threshold)] = "" if rnd is None else str(rnd)
            except FedsimError as exc:
                row.setdefault("emd", "")
                row["status"] = f"failed: {type(exc).__name__}: {exc}"
                row["best_accuracy"] = ""
                row["relative_accuracy"] = ""
                for threshold in MILESTONE_THRESHOLDS:
                    row[_milestone_column(threshold)] = ""
            rows.append(row)
            done.add(key)
            _write_summary(summary_path, rows)

    rows = _sort_rows(rows)
    _write_summary(summary_path, rows)
    return rows

"""Federated training engine: selection, local updates, aggregation, server step.

One round runs: select K clients -> each trains locally from the same starting
model -> size-weighted averaging of their deltas -> server SGD or momentum
update. Optional switches: importance-reweighted client losses (per-class
weights ``target(y) / client_hist(y)``, self-normalized per batch) and
virtual clients (fixed per-round sample count ``N_VC``, size-proportional
selection).

Every random choice draws from a stream derived from
``(config.seed, purpose, round, client_id)``, so runs replay identically at
any execution order and the virtual-client path consumes the same data-order
stream as the epoch path (with equal client sizes and ``N_VC = n_k`` the two
produce bit-identical trajectories).
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .data import ClassDistribution, Dataset, class_histogram
from .errors import (
    DataFormatError,
    NumericError,
    ParameterError,
    ProtocolError,
)
from .metrics import emd, population_distribution
from .models import (
    Batch,
    ModelParams,
    ModelSpec,
    _check_layout,
    _read_vector,
    _write_layout,
    evaluate,
    init_model,
    loss_and_gradient,
)
from .partition import ClientPartition
from .rng import stream

# TargetDistribution is the server-side class prior broadcast to clients for
# importance reweighting (C scalars on the wire).
TargetDistribution = ClassDistribution


@dataclass(frozen=True)
class FedConfig:
    """Hyperparameters of one federated run."""

    rounds: int
    report_goal: int
    batch_size: int
    client_lr: float
    server_lr: float = 1.0
    momentum: float = 0.0
    local_epochs: float = 1.0
    virtual_size: int | None = None
    use_fedir: bool = False
    use_fedvc: bool = False
    seed: int = 0
    eval_interval: int = 10

    def __post_init__(self):
        if self.rounds < 1 or self.report_goal < 1 or self.batch_size < 1:
            raise ParameterError("rounds, report_goal and batch_size must be positive")
        if self.client_lr <= 0 or self.server_lr <= 0:
            raise ParameterError("learning rates must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ParameterError("momentum must lie in [0, 1)")
        if self.local_epochs <= 0:
            raise ParameterError("local_epochs must be positive")
        if self.eval_interval < 1:
            raise ParameterError("eval_interval must be positive")
        if self.use_fedvc:
            if self.virtual_size is None:
                raise ParameterError("virtual-client mode requires virtual_size")
            if self.virtual_size % self.batch_size != 0:
                raise ParameterError("virtual_size must be divisible by batch_size")


@dataclass
class ServerState:
    round: int
    params: ModelParams
    velocity: np.ndarray

    def __post_init__(self):
        if self.velocity.shape != self.params.flat.shape:
            raise ParameterError("velocity layout must match params")
        if self.round < 0:
            raise ParameterError("round must be non-negative")


@dataclass(frozen=True)
class ClientUpdate:
    client_id: str
    delta: np.ndarray
    num_examples_used: int
    local_steps_taken: int
    train_loss: float


@dataclass(frozen=True)
class RoundRecord:
    round: int
    selected_clients: tuple[str, ...]
    mean_train_loss: float
    eval_accuracy: float | None
    emd_of_selection: float
    wall_time_sec: float = field(default=0.0, compare=False)


def _draw_without_replacement(
    ids: list[str], weights: np.ndarray, k: int, rng: np.random.Generator
) -> list[str]:
    """Successive weighted draws, renormalizing after each pick."""
    if k < 1:
        raise ParameterError("must select at least one client")
    if k > len(ids):
        raise ParameterError(f"cannot select {k} of {len(ids)} clients")
    remaining = list(ids)
    w = np.asarray(weights, dtype=np.float64).copy()
    picked = []
    for _ in range(k):
        cumulative = np.cumsum(w)
        target = rng.random() * cumulative[-1]
        j = min(int(np.searchsorted(cumulative, target, side="right")), len(remaining) - 1)
        picked.append(remaining.pop(j))
        w = np.delete(w, j)
    return picked


def select_clients_uniform(partition: ClientPartition, k: int, rng: np.random.Generator) -> list[str]:
    """K distinct clients, uniformly without replacement."""
    return _draw_without_replacement(
        list(partition.client_ids), np.ones(partition.num_clients), k, rng
    )


def select_clients_weighted(partition: ClientPartition, k: int, rng: np.random.Generator) -> list[str]:
    """K distinct clients, probability proportional to client size."""
    return _draw_without_replacement(
        list(partition.client_ids), partition.sizes.astype(np.float64), k, rng
    )


def importance_weights(target: TargetDistribution, client_hist: ClassDistribution) -> np.ndarray:
    """Per-class loss weights ``target(y) / client_hist(y)``.

    Classes the client does not hold get weight 0 (never used). A zero target
    probability on a held class would produce zero-weight examples, which the
    self-normalized loss cannot accept, so it is rejected here.
    """
    if target.num_classes != client_hist.num_classes:
        raise ParameterError("target and client histogram dimensions differ")
    held = client_hist.probs > 0
    if np.any(held & (target.probs == 0)):
        bad = int(np.flatnonzero(held & (target.probs == 0))[0])
        raise ParameterError(f"target assigns zero probability to held class {bad}")
    w = np.zeros(target.num_classes)
    w[held] = target.probs[held] / client_hist.probs[held]
    return w


def _epoch_batches(n: int, batch_size: int, total_steps: int, rng: np.random.Generator):
    """Yield position arrays: reshuffled epochs chopped into batches of B.

    The trailing short batch of each epoch pass is kept; the stream stops
    after ``total_steps`` batches, which truncates fractional epochs.
    """
    emitted = 0
    while emitted < total_steps:
        perm = rng.permutation(n)
        for start in range(0, n, batch_size):
            if emitted == total_steps:
                return
            yield perm[start : start + batch_size]
            emitted += 1


def client_update(
    theta_start: ModelParams,
    dataset: Dataset,
    client_indices: np.ndarray,
    config: FedConfig,
    model_spec: ModelSpec,
    round_idx: int,
    client_id: str,
    target: TargetDistribution | None = None,
    client_hist: ClassDistribution | None = None,
) -> ClientUpdate:
    """Local training pass of one selected client.

    Epoch mode runs ``floor(E * n_k / B)`` SGD steps over reshuffled epochs;
    virtual-client mode resamples exactly ``N_VC`` indices (without
    replacement when the client is large enough, with replacement otherwise)
    and runs ``N_VC / B`` steps. The returned delta is
    ``theta_start - theta_final``, i.e. a descent direction the server
    subtracts.
    """
    indices = np.asarray(client_indices, dtype=np.int64)
    n_k = indices.size
    if n_k == 0:
        raise ParameterError("client has no data")

    per_class_w = None
    if config.use_fedir:
        hist = client_hist if client_hist is not None else class_histogram(dataset, indices)
        tgt = target if target is not None else ClassDistribution.uniform(dataset.num_classes)
        per_class_w = importance_weights(tgt, hist)

    order_rng = stream(config.seed, "client-data-order", round_idx, client_id)
    if config.use_fedvc:
        n_vc = int(config.virtual_size)  # validated non-None by FedConfig
        if n_k >= n_vc:
            resampled = order_rng.permutation(n_k)[:n_vc]
        else:
            resampled = order_rng.integers(0, n_k, size=n_vc)
        steps = n_vc // config.batch_size
        batches = [
            resampled[s * config.batch_size : (s + 1) * config.batch_size]
            for s in range(steps)
        ]
        examples_used = n_vc
    else:
        steps = int(math.floor(config.local_epochs * n_k / config.batch_size))
        batches = _epoch_batches(n_k, config.batch_size, steps, order_rng)
        examples_used = n_k

    theta = theta_start.copy()
    loss_sum = 0.0
    taken = 0
    for positions in batches:
        batch_idx = indices[positions]
        w = per_class_w[dataset.labels[batch_idx]] if per_class_w is not None else None
        batch = Batch(batch_idx, w)
        loss, _, grad = loss_and_gradient(theta, dataset, batch, model_spec.weight_decay)
        theta.flat -= config.client_lr * grad
        loss_sum += loss
        taken += 1

    if taken > 0:
        train_loss = loss_sum / taken
    else:
        w = per_class_w[dataset.labels[indices]] if per_class_w is not None else None
        train_loss, _, _ = loss_and_gradient(
            theta_start, dataset, Batch(indices, w), model_spec.weight_decay
        )

    delta = theta_start.flat - theta.flat
    if not np.isfinite(delta).all():
        raise NumericError(f"client {client_id} produced a non-finite update at round {round_idx}")
    return ClientUpdate(
        client_id=client_id,
        delta=delta,
        num_examples_used=examples_used,
        local_steps_taken=taken,
        train_loss=float(train_loss),
    )


def aggregate(updates: list[ClientUpdate], weights: list[float] | None = None) -> np.ndarray:
    """Weighted mean of client deltas, reduced in client-id order.

    Weights default to each update's ``num_examples_used``. Sorting before the
    reduce makes the result independent of arrival order at the bit level.
    """
    if not updates:
        raise ProtocolError("cannot aggregate an empty update list")
    if weights is None:
        weights = [float(u.num_examples_used) for u in updates]
    if len(weights) != len(updates):
        raise ParameterError("weights must align with updates")
    shape = updates[0].delta.shape
    for u in updates:
        if u.delta.shape != shape:
            raise ParameterError("client updates have mismatched layouts")
    order = sorted(range(len(updates)), key=lambda i: updates[i].client_id)
    total = float(sum(weights[i] for i in order))
    if total <= 0:
        raise ParameterError("aggregation weights must have positive total")
    g_bar = np.zeros(shape)
    for i in order:
        g_bar += (weights[i] / total) * updates[i].delta
    return g_bar


def server_step(state: ServerState, g_bar: np.ndarray, gamma: float, beta: float) -> ServerState:
    """Momentum update ``v' = beta v + g_bar``, ``theta' = theta - gamma v'``.

    ``beta = 0`` reduces to plain server SGD.
    """
    if g_bar.shape != state.params.flat.shape:
        raise ParameterError("aggregated update layout does not match params")
    if not np.isfinite(g_bar).all():
        raise NumericError(f"non-finite aggregated update at round {state.round}")
    velocity = beta * state.velocity + g_bar
    params = ModelParams(state.params.flat - gamma * velocity, state.params.layout)
    return ServerState(round=state.round + 1, params=params, velocity=velocity)


def _selection_emd(partition: ClientPartition, selected: list[str], population: ClassDistribution) -> float:
    lookup = {cid: i for i, cid in enumerate(partition.client_ids)}
    rows = [lookup[cid] for cid in selected]
    counts = partition.class_counts[rows].sum(axis=0)
    return emd(ClassDistribution.from_counts(counts), population)


def run_training(
    dataset: Dataset,
    partition: ClientPartition,
    model_spec: ModelSpec,
    config: FedConfig,
    eval_dataset: Dataset | None = None,
    target: TargetDistribution | None = None,
) -> tuple[ModelParams, list[RoundRecord]]:
    """Run the full federated loop for ``config.rounds`` rounds.

    Selection is uniform, or size-proportional in virtual-client mode. The
    model is evaluated on ``eval_dataset`` (the training set if omitted) every
    ``eval_interval`` rounds and on the final round.
    """
    if config.report_goal > partition.num_clients:
        raise ParameterError(
            f"report goal {config.report_goal} exceeds {partition.num_clients} clients"
        )
    if model_spec.feature_dim != dataset.feature_dim or model_spec.num_classes != dataset.num_classes:
        raise ParameterError("model spec does not match dataset dimensions")

    eval_data = eval_dataset if eval_dataset is not None else dataset
    population = population_distribution(partition)
    histograms = {
        cid: partition.histogram(i) for i, cid in enumerate(partition.client_ids)
    }
    index_of = {cid: i for i, cid in enumerate(partition.client_ids)}

    state = ServerState(
        round=0, params=init_model(model_spec), velocity=np.zeros(model_spec.num_params)
    )
    records: list[RoundRecord] = []
    for t in range(config.rounds):
        started = time.perf_counter()
        sel_rng = stream(config.seed, "client-selection", t)
        if config.use_fedvc:
            selected = select_clients_weighted(partition, config.report_goal, sel_rng)
        else:
            selected = select_clients_uniform(partition, config.report_goal, sel_rng)

        updates = [
            client_update(
                state.params,
                dataset,
                partition.index_sets[index_of[cid]],
                config,
                model_spec,
                round_idx=t,
                client_id=cid,
                target=target,
                client_hist=histograms[cid],
            )
            for cid in selected
        ]
        g_bar = aggregate(updates)
        state = server_step(state, g_bar, config.server_lr, config.momentum)

        eval_acc = None
        if (t + 1) % config.eval_interval == 0 or t == config.rounds - 1:
            eval_acc = evaluate(state.params, eval_data)
        records.append(
            RoundRecord(
                round=t,
                selected_clients=tuple(selected),
                mean_train_loss=float(np.mean([u.train_loss for u in updates])),
                eval_accuracy=eval_acc,
                emd_of_selection=_selection_emd(partition, selected, population),
                wall_time_sec=time.perf_counter() - started,
            )
        )
    return state.params, records


ROUND_CSV_HEADER = ["round", "selected_clients", "mean_train_loss", "eval_accuracy", "emd_of_selection"]


def write_round_records(records: list[RoundRecord], path) -> None:
    """Round metrics CSV; deliberately timestamp-free so reruns byte-match."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(ROUND_CSV_HEADER)
        for r in records:
            writer.writerow(
                [
                    r.round,
                    "|".join(r.selected_clients),
                    repr(r.mean_train_loss),
                    "" if r.eval_accuracy is None else repr(r.eval_accuracy),
                    repr(r.emd_of_selection),
                ]
            )


def read_round_records(path) -> list[RoundRecord]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ROUND_CSV_HEADER:
            raise DataFormatError(f"{path}: bad round-record header")
        records = []
        for row in reader:
            if not row:
                continue
            if len(row) != len(ROUND_CSV_HEADER):
                raise DataFormatError(f"{path}: malformed round-record row {row!r}")
            records.append(
                RoundRecord(
                    round=int(row[0]),
                    selected_clients=tuple(row[1].split("|")) if row[1] else (),
                    mean_train_loss=float(row[2]),
                    eval_accuracy=None if row[3] == "" else float(row[3]),
                    emd_of_selection=float(row[4]),
                )
            )
    return records


_CHECKPOINT_MAGIC = "fedsim-checkpoint v1"


def save_checkpoint(state: ServerState, spec: ModelSpec, path) -> None:
    """Persist round index, parameters, and server velocity."""
    with open(path, "w") as fh:
        fh.write(_CHECKPOINT_MAGIC + "\n")
        fh.write(f"round={state.round}\n")
        _write_layout(fh, spec)
        fh.write("theta\n")
        for value in state.params.flat:
            fh.write(f"{value:.17g}\n")
        fh.write("velocity\n")
        for value in state.velocity:
            fh.write(f"{value:.17g}\n")


def load_checkpoint(path, spec: ModelSpec) -> ServerState:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != _CHECKPOINT_MAGIC:
        raise DataFormatError(f"{path}: not a fedsim checkpoint")
    if len(lines) < 2 or not lines[1].startswith("round="):
        raise DataFormatError(f"{path}: missing round index")
    try:
        round_idx = int(lines[1].removeprefix("round="))
    except ValueError:
        raise DataFormatError(f"{path}: bad round index") from None
    at = _check_layout(lines, 2, spec, path)
    if at >= len(lines) or lines[at] != "theta":
        raise DataFormatError(f"{path}: missing theta block")
    flat, at = _read_vector(lines, at + 1, spec.num_params, path)
    if at >= len(lines) or lines[at] != "velocity":
        raise DataFormatError(f"{path}: missing velocity block")
    velocity, at = _read_vector(lines, at + 1, spec.num_params, path)
    if at != len(lines):
        raise DataFormatError(f"{path}: trailing content")
    return ServerState(round=round_idx, params=ModelParams(flat, spec.layout()), velocity=velocity)

"""Client population synthesis: Dirichlet, sort-and-shard, and manual splits.

All partitioners assign example indices to named clients without replacement,
so client index sets are pairwise disjoint by construction. Construction is
sequential and fully determined by the seed.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .data import ClassDistribution, Dataset, class_histogram
from .errors import DataFormatError, ParameterError, PartitionInfeasibleError
from .rng import stream


def client_id_format(num_clients: int) -> str:
    width = max(4, len(str(max(num_clients - 1, 0))))
    return f"client_{{:0{width}d}}"


@dataclass(frozen=True)
class ClientPartition:
    """Disjoint assignment of dataset indices to named clients.

    ``class_counts[i]`` is the per-class label histogram (integer counts) of
    client ``i``; it is precomputed so metrics never need the raw dataset.
    """

    client_ids: tuple[str, ...]
    index_sets: tuple[np.ndarray, ...]
    class_counts: np.ndarray
    num_examples: int
    num_classes: int

    def __post_init__(self):
        if len(self.client_ids) == 0:
            raise ParameterError("partition must contain at least one client")
        if len(set(self.client_ids)) != len(self.client_ids):
            raise ParameterError("client ids must be unique")
        if len(self.index_sets) != len(self.client_ids):
            raise ParameterError("client_ids and index_sets must align")
        seen = np.zeros(self.num_examples, dtype=bool)
        for cid, idx in zip(self.client_ids, self.index_sets):
            if idx.size == 0:
                raise ParameterError(f"client {cid} is empty")
            if idx.min() < 0 or idx.max() >= self.num_examples:
                raise ParameterError(f"client {cid} has out-of-range indices")
            if seen[idx].any():
                raise ParameterError(f"client {cid} overlaps another client")
            seen[idx] = True

    @property
    def num_clients(self) -> int:
        return len(self.client_ids)

    @property
    def sizes(self) -> np.ndarray:
        return np.array([idx.size for idx in self.index_sets], dtype=np.int64)

    def indices_of(self, client_id: str) -> np.ndarray:
        return self.index_sets[self.client_ids.index(client_id)]

    def histogram(self, i: int) -> ClassDistribution:
        return ClassDistribution.from_counts(self.class_counts[i])


def _build_partition(dataset: Dataset, ids: list[str], index_lists: list[np.ndarray]) -> ClientPartition:
    counts = np.zeros((len(ids), dataset.num_classes), dtype=np.int64)
    frozen = []
    for i, idx in enumerate(index_lists):
        arr = np.asarray(idx, dtype=np.int64)
        arr.setflags(write=False)
        frozen.append(arr)
        if arr.size:
            if arr.min() < 0 or arr.max() >= dataset.num_examples:
                raise ParameterError(f"client {ids[i]} has out-of-range indices")
            counts[i] = np.bincount(dataset.labels[arr], minlength=dataset.num_classes)
    return ClientPartition(
        client_ids=tuple(ids),
        index_sets=tuple(frozen),
        class_counts=counts,
        num_examples=dataset.num_examples,
        num_classes=dataset.num_classes,
    )


@dataclass(frozen=True)
class DirichletSpec:
    """Parameters for Dirichlet client synthesis."""

    alpha: float
    num_clients: int
    samples_per_client: int
    seed: int
    prior: ClassDistribution | None = field(default=None)

    def __post_init__(self):
        if not self.alpha > 0:
            raise ParameterError("alpha must be positive")
        if self.num_clients < 1:
            raise ParameterError("num_clients must be at least 1")
        if self.samples_per_client < 1:
            raise ParameterError("samples_per_client must be at least 1")


def _log_dirichlet(alpha: float, prior: ClassDistribution, rng: np.random.Generator) -> np.ndarray:
    """Unnormalized log-masses of one Dirichlet(alpha * prior) draw.

    Each coordinate is a Gamma(alpha * p_c, 1) variate from Marsaglia-Tsang
    sampling plus the shape-boost identity G_a = G_{a+1} * U^{1/a}, carried in
    log space so tiny shapes (alpha -> 0) never underflow to an all-zero draw.
    Classes with zero prior mass get -inf.
    """
    shapes = alpha * prior.probs
    logs = np.full(prior.num_classes, -np.inf)
    support = shapes > 0
    if not support.any():
        raise ParameterError("prior has empty support")
    boosted = rng.standard_gamma(shapes[support] + 1.0)
    u = rng.random(int(support.sum()))
    with np.errstate(divide="ignore"):
        logs[support] = np.log(boosted) + np.log(u) / shapes[support]
    return logs


def _normalize_log_masses(logs: np.ndarray) -> np.ndarray:
    peak = logs.max()
    if not np.isfinite(peak):
        raise ParameterError("all log-masses are -inf")
    q = np.exp(logs - peak)
    return q / q.sum()


def sample_dirichlet(alpha: float, prior: ClassDistribution, rng: np.random.Generator) -> ClassDistribution:
    """Draw one client class distribution q ~ Dirichlet(alpha * prior).

    Zero-prior classes receive exactly zero probability; a one-hot prior is
    returned unchanged (degenerate Dirichlet support).
    """
    if not alpha > 0:
        raise ParameterError("alpha must be positive")
    return ClassDistribution(_normalize_log_masses(_log_dirichlet(alpha, prior, rng)))


def renormalize_exhausted(q: ClassDistribution, exhausted: set[int]) -> ClassDistribution:
    """Zero out exhausted classes and rescale the rest to sum to one.

    Survivor probabilities keep their pairwise ratios: each is divided by
    ``1 - sum(q over exhausted)``.
    """
    exhausted = set(exhausted)
    if not exhausted:
        return q
    if not all(0 <= c < q.num_classes for c in exhausted):
        raise ParameterError("exhausted contains out-of-range class indices")
    mask = np.zeros(q.num_classes, dtype=bool)
    mask[list(exhausted)] = True
    removed = q.probs[mask].sum()
    if removed >= 1.0 - 1e-15:
        raise ParameterError("exhausted classes cover the distribution's support; cannot renormalize")
    probs = np.where(mask, 0.0, q.probs / (1.0 - removed))
    return ClassDistribution(probs)


def partition_dirichlet(dataset: Dataset, spec: DirichletSpec) -> ClientPartition:
    """Synthesize a non-identical client population by Dirichlet draws.

    Clients are built in order 0..N-1. Each client draws its multinomial q_k,
    then claims ``samples_per_client`` unclaimed examples one at a time: draw
    a label from q_k restricted to non-exhausted classes, pop the next index
    from that class's seeded-shuffled pool. Once a class pool empties it is
    removed from every subsequent draw and the remaining masses rescaled
    (computed on log-masses, which equals the exhausted-class renormalization
    formula but stays defined when q_k underflows at small alpha).
    """
    total = spec.num_clients * spec.samples_per_client
    if total > dataset.num_examples:
        raise ParameterError(
            f"request of {total} examples exceeds dataset size {dataset.num_examples}"
        )
    prior = spec.prior if spec.prior is not None else class_histogram(
        dataset, np.arange(dataset.num_examples)
    )
    if prior.num_classes != dataset.num_classes:
        raise ParameterError("prior dimension does not match dataset classes")

    rng = stream(spec.seed, "dirichlet-partition")
    pools: list[list[int]] = []
    for c in range(dataset.num_classes):
        members = np.flatnonzero(dataset.labels == c)
        rng.shuffle(members)
        pools.append(list(members))

    exhausted = [len(pool) == 0 for pool in pools]
    id_fmt = client_id_format(spec.num_clients)
    ids: list[str] = []
    index_lists: list[np.ndarray] = []

    for k in range(spec.num_clients):
        log_q = _log_dirichlet(spec.alpha, prior, rng)
        probs: np.ndarray | None = None  # recomputed when the exhausted set changes
        claimed = np.empty(spec.samples_per_client, dtype=np.int64)
        for j in range(spec.samples_per_client):
            if probs is None:
                masked = np.where(exhausted, -np.inf, log_q)
                if not np.isfinite(masked.max()):
                    raise PartitionInfeasibleError(
                        f"client {k}: every class in the client's support is exhausted"
                    )
                peak = masked.max()
                probs = np.exp(masked - peak)
                probs /= probs.sum()
                cumulative = np.cumsum(probs)
            y = int(np.searchsorted(cumulative, rng.random() * cumulative[-1], side="right"))
            if y >= dataset.num_classes or probs[y] == 0.0:
                # target rounded up onto the final cumulative boundary
                y = int(np.flatnonzero(probs > 0)[-1])
            claimed[j] = pools[y].pop()
            if not pools[y]:
                exhausted[y] = True
                probs = None
        ids.append(id_fmt.format(k))
        index_lists.append(claimed)

    return _build_partition(dataset, ids, index_lists)


def partition_shards(
    dataset: Dataset,
    num_clients: int,
    shards_per_client: int,
    rng: np.random.Generator,
) -> ClientPartition:
    """Pathological split: sort by label, cut into equal shards, deal randomly.

    Each client receives exactly ``shards_per_client`` contiguous shards of
    the label-sorted index order, so clients see very few distinct classes.
    """
    if num_clients < 1 or shards_per_client < 1:
        raise ParameterError("num_clients and shards_per_client must be positive")
    num_shards = num_clients * shards_per_client
    if dataset.num_examples % num_shards != 0:
        raise ParameterError(
            f"{num_shards} shards do not evenly divide {dataset.num_examples} examples"
        )
    shard_size = dataset.num_examples // num_shards
    order = np.argsort(dataset.labels, kind="stable")
    shards = order.reshape(num_shards, shard_size)
    deal = rng.permutation(num_shards)

    id_fmt = client_id_format(num_clients)
    ids = [id_fmt.format(k) for k in range(num_clients)]
    index_lists = [
        np.sort(shards[deal[k * shards_per_client : (k + 1) * shards_per_client]].ravel())
        for k in range(num_clients)
    ]
    return _build_partition(dataset, ids, index_lists)


def partition_manual(dataset: Dataset, assignments: dict[str, np.ndarray]) -> ClientPartition:
    """Build a partition from explicit per-client index lists."""
    ids = list(assignments.keys())
    return _build_partition(dataset, ids, [assignments[cid] for cid in ids])


def partition_by_sizes(dataset: Dataset, sizes: list[int], rng: np.random.Generator) -> ClientPartition:
    """Randomly assign disjoint clients with the given sizes (imbalance toys)."""
    sizes = [int(s) for s in sizes]
    if any(s < 1 for s in sizes):
        raise ParameterError("every client size must be positive")
    total = sum(sizes)
    if total > dataset.num_examples:
        raise ParameterError(f"requested {total} examples from {dataset.num_examples}")
    order = rng.permutation(dataset.num_examples)
    id_fmt = client_id_format(len(sizes))
    ids, index_lists, at = [], [], 0
    for k, s in enumerate(sizes):
        ids.append(id_fmt.format(k))
        index_lists.append(np.sort(order[at : at + s]))
        at += s
    return _build_partition(dataset, ids, index_lists)


def save_partition(partition: ClientPartition, path) -> None:
    """Write (client_id, example_index) rows in client order, then index order."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["client_id", "example_index"])
        for cid, idx in zip(partition.client_ids, partition.index_sets):
            for i in sorted(int(v) for v in idx):
                writer.writerow([cid, i])


def load_partition(path, dataset: Dataset) -> ClientPartition:
    """Load a partition CSV and validate it against ``dataset``."""
    assignments: dict[str, list[int]] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path}: empty file") from None
        if header != ["client_id", "example_index"]:
            raise DataFormatError(f"{path}: line 1: bad header {header!r}")
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise DataFormatError(f"{path}: line {line_no}: expected 2 columns")
            try:
                index = int(row[1])
            except ValueError:
                raise DataFormatError(f"{path}: line {line_no}: non-integer index {row[1]!r}") from None
            assignments.setdefault(row[0], []).append(index)
    if not assignments:
        raise DataFormatError(f"{path}: no assignment rows")
    return partition_manual(dataset, {cid: np.array(v) for cid, v in assignments.items()})

"""Measurement layer: population distribution, EMD non-identicalness,
relative accuracy, and the effective learning rate."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .data import ClassDistribution
from .errors import ParameterError
from .partition import ClientPartition


def emd(q: ClassDistribution, p: ClassDistribution) -> float:
    """L1 distance between two class distributions, bounded by [0, 2]."""
    if q.num_classes != p.num_classes:
        raise ParameterError(
            f"dimension mismatch: {q.num_classes} vs {p.num_classes} classes"
        )
    return float(np.abs(q.probs - p.probs).sum())


def population_distribution(partition: ClientPartition) -> ClassDistribution:
    """Size-weighted mixture of client histograms; equals the histogram of the
    union of all assigned examples (exact counting identity)."""
    totals = partition.class_counts.sum(axis=0)
    return ClassDistribution.from_counts(totals)


@dataclass(frozen=True)
class NonIdenticalnessReport:
    population: ClassDistribution
    per_client_emd: tuple[tuple[str, float], ...]
    client_sizes: tuple[int, ...]
    weighted_average: float


def non_identicalness(partition: ClientPartition) -> NonIdenticalnessReport:
    """Size-weighted average EMD between client histograms and the population."""
    population = population_distribution(partition)
    sizes = partition.sizes
    emds = np.array(
        [emd(partition.histogram(i), population) for i in range(partition.num_clients)]
    )
    weights = sizes / sizes.sum()
    average = float(np.sum(weights * emds))
    return NonIdenticalnessReport(
        population=population,
        per_client_emd=tuple(zip(partition.client_ids, (float(e) for e in emds))),
        client_sizes=tuple(int(s) for s in sizes),
        weighted_average=average,
    )


def relative_accuracy(federated_acc: float, centralized_acc: float) -> float:
    """Federated accuracy as a fraction of the centralized baseline."""
    for name, value in (("federated_acc", federated_acc), ("centralized_acc", centralized_acc)):
        if not 0.0 <= value <= 1.0:
            raise ParameterError(f"{name} must lie in [0, 1], got {value!r}")
    if centralized_acc == 0.0:
        raise ParameterError("centralized accuracy must be positive")
    return federated_acc / centralized_acc


def effective_learning_rate(eta: float, beta: float) -> float:
    """Steady-state step magnitude of momentum SGD: eta / (1 - beta)."""
    if eta <= 0:
        raise ParameterError("eta must be positive")
    if not 0.0 <= beta < 1.0:
        raise ParameterError("beta must lie in [0, 1)")
    return eta / (1.0 - beta)


def save_report(report: NonIdenticalnessReport, path) -> None:
    """Write per-client rows plus a trailing weighted-average summary row."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["client_id", "size", "emd"])
        for (cid, value), size in zip(report.per_client_emd, report.client_sizes):
            writer.writerow([cid, size, repr(value)])
        writer.writerow(["weighted_average", sum(report.client_sizes), repr(report.weighted_average)])

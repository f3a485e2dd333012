"""Target-distribution diagnostics for training sets: coverage, entropy, Gini."""

from __future__ import annotations

import csv
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from sssbench.augment import TrainingSet


@dataclass(frozen=True)
class TargetDistribution:
    """Target counts indexed by item id (slot 0 is padding and always 0)."""

    counts: np.ndarray
    probs: np.ndarray
    order: np.ndarray  # items with count > 0, by count desc then id asc

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __eq__(self, other) -> bool:
        if not isinstance(other, TargetDistribution):
            return NotImplemented
        n = max(len(self.counts), len(other.counts))
        a = np.zeros(n, dtype=np.int64)
        b = np.zeros(n, dtype=np.int64)
        a[: len(self.counts)] = self.counts
        b[: len(other.counts)] = other.counts
        return bool(np.array_equal(a, b))

    __hash__ = None


@dataclass(frozen=True)
class InputsPerTarget:
    example_counts: dict[int, int]
    distinct_inputs: dict[int, int]

    def rows(self):
        for item in sorted(self.example_counts):
            yield item, self.example_counts[item], self.distinct_inputs[item]


class DistributionStats(NamedTuple):
    coverage: float
    entropy: float
    gini: float

    def as_line(self) -> str:
        return f"coverage={self.coverage:.4f} entropy={self.entropy:.4f} gini={self.gini:.4f}"


def _targets(ts: TrainingSet) -> list[int]:
    if len(ts) == 0:
        raise ValueError("empty training set")
    return [ex.target for ex in ts.examples]


def distribution_from_targets(targets, num_items: int | None = None) -> TargetDistribution:
    targets = np.asarray(list(targets), dtype=np.int64)
    if targets.size == 0:
        raise ValueError("empty training set")
    size = max(int(targets.max()), num_items or 0) + 1
    counts = np.bincount(targets, minlength=size)
    probs = counts / counts.sum()
    seen = np.flatnonzero(counts)
    order = seen[np.lexsort((seen, -counts[seen]))]
    return TargetDistribution(counts, probs, order)


def target_distribution(ts: TrainingSet, num_items: int | None = None) -> TargetDistribution:
    return distribution_from_targets(_targets(ts), num_items)


def inputs_per_target(ts: TrainingSet) -> InputsPerTarget:
    """Examples per target and distinct inputs per target (exact sequence equality)."""
    if len(ts) == 0:
        raise ValueError("empty training set")
    counts: dict[int, int] = defaultdict(int)
    inputs: dict[int, set] = defaultdict(set)
    for ex in ts.examples:
        counts[ex.target] += 1
        inputs[ex.target].add(tuple(ex.input))
    return InputsPerTarget(dict(counts), {t: len(v) for t, v in inputs.items()})


def gini(values) -> float:
    """Gini coefficient of non-negative values, zeros included."""
    p = np.sort(np.asarray(values, dtype=np.float64))
    n = p.size
    total = p.sum()
    if n == 0 or total == 0:
        return 0.0
    i = np.arange(1, n + 1)
    return float(((2 * i - n - 1) * p).sum() / (n * total))


def entropy_bits(probs) -> float:
    p = np.asarray(probs, dtype=np.float64)
    p = p[p > 0]
    return float(-(p * np.log2(p)).sum()) + 0.0


def distribution_stats(dist: TargetDistribution, catalog_size: int) -> DistributionStats:
    """Coverage and Gini are over the full catalog (items 1..catalog_size)."""
    probs = dist.probs[1:]
    if probs.size > catalog_size:
        if probs[catalog_size:].any():
            raise ValueError("distribution has targets outside the catalog")
        probs = probs[:catalog_size]
    full = np.zeros(catalog_size)
    full[: probs.size] = probs
    coverage = np.count_nonzero(full) / catalog_size
    return DistributionStats(float(coverage), entropy_bits(full), gini(full))


def write_rank_csv(dist: TargetDistribution, path: str | Path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["rank", "probability"])
        for rank, item in enumerate(dist.order, start=1):
            w.writerow([rank, repr(float(dist.probs[item]))])
    return path


def write_inputs_csv(ipt: InputsPerTarget, path: str | Path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["target_item", "example_count", "distinct_inputs"])
        for row in ipt.rows():
            w.writerow(row)
    return path

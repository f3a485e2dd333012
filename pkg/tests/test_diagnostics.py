import csv
import math
from collections import Counter

import numpy as np
import pytest

from sssbench.augment import ORIGINAL, PREFIX, SUFFIX, TargetStrategy, TrainingSet, build_training_set, sliding
from sssbench.corpus import UserSequence
from sssbench.diagnostics import (
    distribution_from_targets,
    distribution_stats,
    entropy_bits,
    gini,
    inputs_per_target,
    target_distribution,
    write_inputs_csv,
    write_rank_csv,
)

from conftest import random_sequences

SINGLE, MULTI = TargetStrategy.SINGLE, TargetStrategy.MULTI


def from_pairs(pairs):
    seqs = [tuple(inp) + (t,) for inp, t in pairs]
    return TrainingSet(seqs, list(range(len(seqs))), PREFIX, SINGLE)


def gini_pairs(values):
    """Mean absolute difference form, independent of the sorted formula."""
    x = np.asarray(values, dtype=float)
    n = len(x)
    return np.abs(x[:, None] - x[None, :]).sum() / (2 * n * n * x.mean())


class TestTargetDistribution:
    def test_counts(self):
        dist = target_distribution(from_pairs([([1], 3), ([2], 3), ([1], 5)]))
        assert dist.probs[3] == pytest.approx(2 / 3) and dist.probs[5] == pytest.approx(1 / 3)
        assert dist.order.tolist() == [3, 5] and dist.total == 3

    def test_order_ties_by_index(self):
        dist = distribution_from_targets([7, 2, 7, 2, 4])
        assert dist.order.tolist() == [2, 7, 4]

    def test_suffix_point_mass(self):
        dist = target_distribution(build_training_set([UserSequence(1, (4, 2, 9, 6))], SUFFIX, SINGLE))
        assert dist.order.tolist() == [6] and dist.probs[6] == 1.0

    def test_invariants(self, rng):
        ts = build_training_set(random_sequences(rng, 80), sliding(5), MULTI)
        dist = target_distribution(ts)
        assert abs(dist.probs.sum() - 1) <= 1e-9 and dist.counts.sum() == len(ts)
        assert dist.counts.dtype.kind == "i" and (dist.counts >= 0).all()

    def test_prefix_single_equals_original_multi(self, rng):
        seqs = random_sequences(rng, 200)
        a = target_distribution(build_training_set(seqs, PREFIX, SINGLE))
        b = target_distribution(build_training_set(seqs, ORIGINAL, MULTI))
        assert a == b and np.array_equal(a.order, b.order)

    def test_suffix_global_equals_original_last_items(self, rng):
        seqs = random_sequences(rng, 100, hi=40)
        suffix = target_distribution(build_training_set(seqs, SUFFIX, SINGLE))
        weights = Counter()
        for s in seqs:
            weights[s.items[-1]] += len(s) - 1
        assert {int(i): int(suffix.counts[i]) for i in suffix.order} == dict(weights)

    def test_empty(self):
        with pytest.raises(ValueError):
            target_distribution(from_pairs([]))


class TestInputsPerTarget:
    def test_duplicates_collapse(self):
        ipt = inputs_per_target(from_pairs([([1], 2), ([1], 2)]))
        assert ipt.example_counts[2] == 2 and ipt.distinct_inputs[2] == 1

    def test_distinct(self):
        ipt = inputs_per_target(from_pairs([([1], 2), ([3], 2)]))
        assert ipt.example_counts[2] == 2 and ipt.distinct_inputs[2] == 2

    @pytest.mark.parametrize("n", range(2, 13))
    def test_prefix_multi_closed_form(self, n):
        seq = tuple(range(1, n + 1))
        ipt = inputs_per_target(build_training_set([UserSequence(1, seq)], PREFIX, MULTI))
        for k in range(2, n + 1):
            assert ipt.example_counts[k] == n - k + 1 and ipt.distinct_inputs[k] == 1

    def test_distinct_never_exceeds_count(self, rng):
        ipt = inputs_per_target(build_training_set(random_sequences(rng, 60, num_items=8), SUFFIX, MULTI))
        assert all(ipt.distinct_inputs[t] <= c for t, c in ipt.example_counts.items())


class TestStats:
    @pytest.mark.parametrize("n", [1, 2, 7, 64, 1000])
    def test_uniform(self, n):
        dist = distribution_from_targets(range(1, n + 1))
        s = distribution_stats(dist, n)
        assert s.coverage == 1.0
        assert abs(s.entropy - math.log2(n)) <= 1e-12 and abs(s.gini) <= 1e-12

    @pytest.mark.parametrize("n", [2, 5, 50])
    def test_point_mass(self, n):
        s = distribution_stats(distribution_from_targets([1, 1, 1]), n)
        assert s.coverage == pytest.approx(1 / n) and s.entropy == 0.0
        assert s.gini == pytest.approx((n - 1) / n, abs=1e-12)

    def test_two_point(self):
        s = distribution_stats(distribution_from_targets([1, 2]), 4)
        assert s.coverage == 0.5 and s.entropy == 1.0

    def test_gini_against_pairwise_form(self, rng):
        for _ in range(20):
            x = rng.integers(0, 10, size=int(rng.integers(2, 40)))
            if x.sum():
                assert gini(x) == pytest.approx(gini_pairs(x), abs=1e-12)

    def test_gini_range(self, rng):
        for _ in range(20):
            g = gini(rng.exponential(size=30))
            assert 0 <= g < 1

    def test_entropy_ignores_zeros(self):
        assert entropy_bits([0.5, 0, 0.5]) == 1.0

    def test_outside_catalog(self):
        with pytest.raises(ValueError):
            distribution_stats(distribution_from_targets([9]), 3)


class TestCsv:
    def test_rank_csv(self, tmp_path):
        path = write_rank_csv(distribution_from_targets([5, 5, 2, 9]), tmp_path / "r.csv")
        rows = list(csv.reader(path.open()))
        assert rows[0] == ["rank", "probability"]
        assert [r[0] for r in rows[1:]] == ["1", "2", "3"]
        assert [float(r[1]) for r in rows[1:]] == [0.5, 0.25, 0.25]

    def test_inputs_csv(self, tmp_path):
        ipt = inputs_per_target(from_pairs([([1], 2), ([1], 2), ([4], 3)]))
        rows = list(csv.reader(write_inputs_csv(ipt, tmp_path / "i.csv").open()))
        assert rows == [["target_item", "example_count", "distinct_inputs"], ["2", "2", "1"], ["3", "1", "1"]]

import math

import numpy as np
import pytest

from sssbench.corpus import UserSequence, leave_one_out
from sssbench.evaluation import (
    METRIC_NAMES,
    MetricReport,
    eval_contexts,
    evaluate,
    metrics_from_rank,
    rank_of_target,
    ranks_of_targets,
)
from sssbench.models import RandomScorer

from conftest import make_split


def sort_oracle(scores, target):
    """Position of target after a stable sort by descending score over items 1..n."""
    items = sorted(range(1, len(scores)), key=lambda i: (-scores[i], i))
    return items.index(target) + 1


class OracleModel:
    """Scores the held-out item of each context highest."""

    def __init__(self, num_items, lookup):
        self.num_items = num_items
        self.lookup = lookup

    def score(self, contexts):
        out = np.zeros((len(contexts), self.num_items + 1))
        for i, c in enumerate(contexts):
            out[i, self.lookup[tuple(c)]] = 1.0
        out[:, 0] = -np.inf
        return out


class FixedModel:
    def __init__(self, row):
        self.row = np.asarray(row, dtype=float)

    def score(self, contexts):
        return np.tile(self.row, (len(contexts), 1))


class TestRank:
    def test_unique_max(self):
        assert rank_of_target(np.array([-np.inf, 0.1, 0.9, 0.3]), 2) == 1

    def test_ties_by_index(self):
        assert rank_of_target(np.array([-np.inf, 1, 1, 1, 1, 1.0]), 3) == 3

    def test_padding_ignored(self):
        assert rank_of_target(np.array([99.0, 0.5, 0.7]), 1) == 2

    def test_padding_target(self):
        with pytest.raises(ValueError):
            rank_of_target(np.ones(3), 0)

    def test_against_sort_oracle(self, rng):
        for _ in range(100):
            n = int(rng.integers(2, 60))
            scores = rng.integers(0, 6, size=n + 1).astype(float)  # many ties
            scores[0] = -np.inf
            t = int(rng.integers(1, n + 1))
            assert rank_of_target(scores, t) == sort_oracle(scores, t)

    def test_vectorized_matches(self, rng):
        scores = rng.integers(0, 4, size=(50, 30)).astype(float)
        targets = rng.integers(1, 30, size=50)
        expected = [rank_of_target(s, t) for s, t in zip(scores, targets)]
        assert ranks_of_targets(scores, targets).tolist() == expected

    def test_increasing_transform(self, rng):
        scores = rng.normal(size=(20, 40))
        targets = rng.integers(1, 40, size=20)
        assert np.array_equal(ranks_of_targets(scores, targets), ranks_of_targets(np.exp(3 * scores) + 1, targets))


class TestMetrics:
    def test_rank_one(self):
        assert metrics_from_rank(1, 10) == (1, 1.0)

    def test_rank_three(self):
        assert metrics_from_rank(3, 10) == (1, 0.5)

    def test_outside(self):
        assert metrics_from_rank(11, 10) == (0, 0.0)

    def test_invalid(self):
        with pytest.raises(ValueError):
            metrics_from_rank(0, 10)

    def test_report_from_ranks(self):
        rep = MetricReport.from_ranks(np.array([1, 3, 15, 40]), keep_ranks=True)
        assert rep["H@10"] == 0.5 and rep["H@20"] == 0.75
        assert rep["N@10"] == pytest.approx((1 + 0.5) / 4)
        assert rep["N@20"] == pytest.approx((1 + 0.5 + 1 / math.log2(16)) / 4)
        assert rep.num_users == 4 and rep.ranks.tolist() == [1, 3, 15, 40]
        rep.check_invariants()

    def test_invariant_violation(self):
        with pytest.raises(ValueError):
            MetricReport({"H@10": 0.5, "N@10": 0.6, "H@20": 0.5, "N@20": 0.6}, 1).check_invariants()

    def test_empty(self):
        with pytest.raises(ValueError):
            MetricReport.from_ranks(np.array([], dtype=int))


class TestEvaluate:
    def test_contexts(self):
        split = make_split([[1, 2, 3, 4, 5]])
        ctx, tgt = eval_contexts(split, "valid", 50)
        assert ctx == [(1, 2, 3)] and tgt.tolist() == [4]
        ctx, tgt = eval_contexts(split, "test", 2)
        assert ctx == [(3, 4)] and tgt.tolist() == [5]

    def test_oracle_model(self):
        split = make_split([[1, 2, 3, 4, 5], [2, 3, 4, 1], [5, 4, 3]])
        lookup = {}
        for phase in ("valid", "test"):
            ctx, tgt = eval_contexts(split, phase, 50)
            lookup.update({tuple(c): int(t) for c, t in zip(ctx, tgt)})
        model = OracleModel(5, lookup)
        for phase in ("valid", "test"):
            rep = evaluate(model, split, phase)
            assert all(rep[m] == 1.0 for m in METRIC_NAMES)

    def test_hand_trace(self):
        split = make_split([[1, 2, 3, 4, 5]])
        # test target 5 sits behind items 1 and 3
        model = FixedModel([-np.inf, 0.9, 0.2, 0.9, 0.1, 0.5])
        rep = evaluate(model, split, "test", keep_ranks=True)
        assert rep.ranks.tolist() == [3]
        assert rep["N@10"] == 0.5 and rep["H@10"] == 1.0

    def test_filter_seen(self):
        split = make_split([[1, 2, 3, 4, 5]])
        model = FixedModel([-np.inf, 0.9, 0.2, 0.9, 0.1, 0.5])
        rep = evaluate(model, split, "test", filter_seen=True, keep_ranks=True)
        assert rep.ranks.tolist() == [1]

    def test_filter_seen_keeps_repeated_target(self):
        split = make_split([[1, 2, 1, 3, 1]])
        model = FixedModel([-np.inf, 0.1, 0.9, 0.9, 0.0])
        assert evaluate(model, split, "test", filter_seen=True, keep_ranks=True).ranks.tolist() == [1]

    def test_nan_scores(self):
        split = make_split([[1, 2, 3]])
        with pytest.raises(FloatingPointError):
            evaluate(FixedModel([-np.inf, np.nan, 1, 2]), split)

    def test_bad_phase(self):
        with pytest.raises(ValueError):
            evaluate(FixedModel([0, 1, 2, 3]), make_split([[1, 2, 3]]), "train")

    def test_read_only_and_deterministic(self, small):
        from sssbench.augment import ORIGINAL, TargetStrategy, build_training_set
        from sssbench.models import fit_counting_model

        m = fit_counting_model(build_training_set(small.split, ORIGINAL, TargetStrategy.SINGLE), "markov", small.catalog.num_items)
        before = m.popularity.counts.copy()
        a = evaluate(m, small.split, "test", keep_ranks=True)
        b = evaluate(m, small.split, "test", batch_size=7, keep_ranks=True)
        assert np.array_equal(a.ranks, b.ranks) and a.metrics == b.metrics
        assert np.array_equal(before, m.popularity.counts)

    def test_random_scorer_calibration(self):
        num_items = 200
        seqs = [UserSequence(u, (1, 2, 1 + u % num_items)) for u in range(1, 12001)]
        split = leave_one_out(seqs, num_items)
        rep = evaluate(RandomScorer(num_items, seed=0), split)
        for k in (10, 20):
            p = k / num_items
            sigma = math.sqrt(p * (1 - p) / rep.num_users)
            assert abs(rep[f"H@{k}"] - p) <= 3 * sigma

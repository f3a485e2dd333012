"""Count-based baselines and a uniform random scorer."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from sssbench.augment import TrainingSet


class PopularityModel:
    kind = "pop"

    def __init__(self, num_items: int, counts: np.ndarray | None = None):
        self.num_items = num_items
        self.counts = counts if counts is not None else np.zeros(num_items + 1, dtype=np.int64)

    def fit(self, ts: TrainingSet) -> "PopularityModel":
        for ex in ts.examples:
            self.counts[ex.target] += 1
        return self

    def score(self, contexts: Sequence[Sequence[int]]) -> np.ndarray:
        scores = np.tile(self.counts.astype(np.float64), (len(contexts), 1))
        scores[:, 0] = -np.inf
        return scores


class MarkovModel:
    """First-order transitions from the last input item to the target."""

    kind = "markov"

    def __init__(self, num_items: int):
        self.num_items = num_items
        self.popularity = PopularityModel(num_items)
        self.transitions: dict[int, np.ndarray] = {}

    def fit(self, ts: TrainingSet) -> "MarkovModel":
        self.popularity.fit(ts)
        for ex in ts.examples:
            row = self.transitions.get(ex.input[-1])
            if row is None:
                row = self.transitions[ex.input[-1]] = np.zeros(self.num_items + 1, dtype=np.int64)
            row[ex.target] += 1
        return self

    def score(self, contexts: Sequence[Sequence[int]]) -> np.ndarray:
        pop = self.popularity.counts.astype(np.float64)
        scores = np.empty((len(contexts), self.num_items + 1))
        for i, ctx in enumerate(contexts):
            row = self.transitions.get(ctx[-1]) if len(ctx) else None
            scores[i] = pop if row is None else row
        scores[:, 0] = -np.inf
        return scores

    def state_arrays(self) -> dict[str, np.ndarray]:
        src = np.array(sorted(self.transitions), dtype=np.int64)
        rows = (
            np.stack([self.transitions[s] for s in src])
            if len(src)
            else np.zeros((0, self.num_items + 1), dtype=np.int64)
        )
        return {"popularity": self.popularity.counts, "transition_src": src, "transition_counts": rows}

    @classmethod
    def from_arrays(cls, num_items: int, arrays) -> "MarkovModel":
        m = cls(num_items)
        m.popularity.counts = np.array(arrays["popularity"])
        for s, row in zip(arrays["transition_src"], arrays["transition_counts"]):
            m.transitions[int(s)] = np.array(row)
        return m


def fit_counting_model(train: TrainingSet, kind: str, num_items: int):
    if len(train) == 0:
        raise ValueError("empty training set")
    if kind in ("pop", "popularity"):
        return PopularityModel(num_items).fit(train)
    if kind == "markov":
        return MarkovModel(num_items).fit(train)
    raise ValueError(f"unknown counting model {kind!r}")


class RandomScorer:
    """Independent uniform scores per query; a calibration baseline."""

    kind = "random"

    def __init__(self, num_items: int, seed: int = 0):
        self.num_items = num_items
        self.rng = np.random.default_rng(seed)

    def score(self, contexts: Sequence[Sequence[int]]) -> np.ndarray:
        scores = self.rng.random((len(contexts), self.num_items + 1))
        scores[:, 0] = -np.inf
        return scores

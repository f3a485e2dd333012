"""Leave-one-out full-catalog ranking and H@K / N@K."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from sssbench.corpus import PADDING, DatasetSplit

CUTOFFS = (10, 20)
METRIC_NAMES = ("H@10", "N@10", "H@20", "N@20")


def rank_of_target(scores: np.ndarray, target: int) -> int:
    """1-based rank; ties go to the lower item index, the padding slot never counts."""
    if target == PADDING:
        raise ValueError("target is the padding index")
    s = scores[1:]
    t = s[target - 1]
    return int(1 + (s > t).sum() + (s[: target - 1] == t).sum())


def ranks_of_targets(scores: np.ndarray, targets: np.ndarray) -> np.ndarray:
    targets = np.asarray(targets)
    s = scores[:, 1:]
    t = s[np.arange(len(targets)), targets - 1][:, None]
    ahead_tie = (s == t) & (np.arange(1, s.shape[1] + 1)[None, :] < targets[:, None])
    return 1 + (s > t).sum(axis=1) + ahead_tie.sum(axis=1)


def metrics_from_rank(rank: int, k: int) -> tuple[int, float]:
    if rank < 1 or k < 1:
        raise ValueError("rank and k must be >= 1")
    if rank <= k:
        return 1, float(1.0 / np.log2(rank + 1))
    return 0, 0.0


@dataclass
class MetricReport:
    metrics: dict[str, float]
    num_users: int
    ranks: np.ndarray | None = field(default=None, repr=False)

    def __getitem__(self, name: str) -> float:
        return self.metrics[name]

    def check_invariants(self) -> None:
        """Raise if the cutoff/metric orderings of a single-item ranking are broken."""
        m = self.metrics
        ok = (
            m["H@10"] <= m["H@20"] and m["N@10"] <= m["N@20"]
            and m["N@10"] <= m["H@10"] and m["N@20"] <= m["H@20"]
            and all(0.0 <= v <= 1.0 for v in m.values())
        )
        if not ok:
            raise ValueError(f"metric invariants violated: {m}")

    @classmethod
    def from_ranks(cls, ranks: np.ndarray, keep_ranks: bool = False) -> "MetricReport":
        ranks = np.asarray(ranks)
        if len(ranks) == 0:
            raise ValueError("no users evaluated")
        metrics = {}
        for k in CUTOFFS:
            hit = ranks <= k
            metrics[f"H@{k}"] = float(hit.mean())
            metrics[f"N@{k}"] = float(np.where(hit, 1.0 / np.log2(ranks + 1), 0.0).mean())
        return cls({name: metrics[name] for name in METRIC_NAMES}, len(ranks), ranks if keep_ranks else None)


def eval_contexts(split: DatasetSplit, phase: str, max_len: int):
    if phase not in ("valid", "test"):
        raise ValueError("phase must be 'valid' or 'test'")
    contexts, targets = [], []
    for s in split.train:
        ctx = s.items if phase == "valid" else s.items + (split.valid_target[s.user],)
        contexts.append(ctx[-max_len:])
        targets.append(split.test_target[s.user] if phase == "test" else split.valid_target[s.user])
    return contexts, np.array(targets, dtype=np.int64)


def evaluate(
    model,
    split: DatasetSplit,
    phase: str = "test",
    max_len: int = 50,
    filter_seen: bool = False,
    batch_size: int = 1024,
    keep_ranks: bool = False,
) -> MetricReport:
    """Rank every catalog item for each user's held-out item.

    The context is the training sequence (validation) or the training
    sequence plus the validation item (test), cut to the last ``max_len``
    items. ``filter_seen`` removes context items other than the target from
    the ranking. ``model`` needs a ``score(contexts) -> users x (items+1)``
    method.
    """
    contexts, targets = eval_contexts(split, phase, max_len)
    if not contexts:
        raise ValueError("no users to evaluate")
    ranks = np.empty(len(targets), dtype=np.int64)
    for start in range(0, len(contexts), batch_size):
        ctx = contexts[start : start + batch_size]
        tgt = targets[start : start + batch_size]
        scores = model.score(ctx)
        if np.isnan(scores).any():
            raise FloatingPointError("model produced NaN scores")
        if filter_seen:
            for i, c in enumerate(ctx):
                seen = [v for v in set(c) if v != tgt[i]]
                scores[i, seen] = -np.inf
        ranks[start : start + batch_size] = ranks_of_targets(scores, tgt)
    return MetricReport.from_ranks(ranks, keep_ranks)


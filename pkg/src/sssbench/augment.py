"""Sub-sequence splitting, target strategies and training-set construction."""

from __future__ import annotations

import enum
from collections import Counter
from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple, Sequence

from sssbench.corpus import DatasetSplit, UserSequence

DEFAULT_WINDOW = 8
SPLIT_KINDS = ("original", "prefix", "suffix", "sliding")


@dataclass(frozen=True)
class SplitMethod:
    kind: str = "original"
    window: int | None = None

    def __post_init__(self):
        if self.kind not in SPLIT_KINDS:
            raise ValueError(f"unknown split method {self.kind!r}")
        if self.kind == "sliding":
            if self.window is None:
                object.__setattr__(self, "window", DEFAULT_WINDOW)
            if self.window < 2:
                raise ValueError("sliding window length must be >= 2")
        elif self.window is not None:
            raise ValueError(f"{self.kind} split takes no window")

    @classmethod
    def parse(cls, text: str, window: int | None = None) -> "SplitMethod":
        """Accepts ``prefix``, ``sliding``, ``sliding:5`` and the like."""
        kind, _, w = text.strip().lower().partition(":")
        if w:
            window = int(w)
        return cls(kind, window if kind == "sliding" else None)

    def __str__(self) -> str:
        return f"sliding:{self.window}" if self.kind == "sliding" else self.kind


ORIGINAL = SplitMethod("original")
PREFIX = SplitMethod("prefix")
SUFFIX = SplitMethod("suffix")


def sliding(window: int = DEFAULT_WINDOW) -> SplitMethod:
    return SplitMethod("sliding", window)


class TargetStrategy(str, enum.Enum):
    SINGLE = "single"
    MULTI = "multi"

    def __str__(self) -> str:
        return self.value


class TrainingExample(NamedTuple):
    input: tuple[int, ...]
    target: int


def _items(s) -> tuple[int, ...]:
    return s.items if isinstance(s, UserSequence) else tuple(s)


def split_sequence(s, method: SplitMethod) -> list[tuple[int, ...]]:
    items = _items(s)
    n = len(items)
    if method.kind in ("prefix", "suffix") and n < 2:
        raise ValueError("sequence too short to split")
    if n < 1:
        raise ValueError("empty sequence")
    if method.kind == "original":
        return [items]
    if method.kind == "prefix":
        return [items[:j] for j in range(2, n + 1)]
    if method.kind == "suffix":
        return [items[i:] for i in range(n - 2, -1, -1)]
    t = method.window
    if t >= n:
        return [items]
    return [items[i : i + t] for i in range(n - t + 1)]


def expand_targets(sub: Sequence[int], strategy: TargetStrategy) -> list[TrainingExample]:
    sub = tuple(sub)
    if len(sub) < 2:
        raise ValueError("need at least two items to form an input-target pair")
    if strategy == TargetStrategy.SINGLE:
        return [TrainingExample(sub[:-1], sub[-1])]
    return [TrainingExample(sub[: k - 1], sub[k - 1]) for k in range(2, len(sub) + 1)]


@dataclass
class TrainingSet:
    """Training sub-sequences together with the target strategy applied to them.

    Models are trained on ``sequences`` directly (every real position of a
    multi-target sequence is supervised at once); ``examples`` is the
    equivalent flat list of input-target pairs.
    """

    sequences: list[tuple[int, ...]]
    users: list[int]
    method: SplitMethod
    strategy: TargetStrategy
    skipped: int = 0
    discarded: int = 0
    user_items: dict[int, frozenset[int]] = field(default_factory=dict, repr=False)

    @property
    def provenance(self) -> tuple[SplitMethod, TargetStrategy]:
        return self.method, self.strategy

    def _pairs_per_sequence(self, seq) -> int:
        return 1 if self.strategy == TargetStrategy.SINGLE else len(seq) - 1

    @cached_property
    def examples(self) -> list[TrainingExample]:
        out = []
        for seq in self.sequences:
            out.extend(expand_targets(seq, self.strategy))
        return out

    @cached_property
    def example_users(self) -> list[int]:
        out = []
        for u, seq in zip(self.users, self.sequences):
            out.extend([u] * self._pairs_per_sequence(seq))
        return out

    @cached_property
    def per_user_counts(self) -> dict[int, int]:
        counts: Counter = Counter()
        for u, seq in zip(self.users, self.sequences):
            counts[u] += self._pairs_per_sequence(seq)
        return dict(counts)

    def __len__(self) -> int:
        return sum(self._pairs_per_sequence(s) for s in self.sequences)


def _train_sequences(split) -> list[UserSequence]:
    return split.train if isinstance(split, DatasetSplit) else list(split)


def build_training_set(
    split,
    method: SplitMethod,
    strategy: TargetStrategy,
    max_len: int = 50,
) -> TrainingSet:
    """Truncate each training sequence to its last ``max_len`` items, split it, keep duplicates.

    ``split`` is a :class:`DatasetSplit` or a plain list of user sequences.
    Sequences that cannot produce a single pair are counted in ``skipped``.
    """
    if max_len < 2:
        raise ValueError("max_len must be >= 2")
    seqs, users, skipped = [], [], 0
    user_items = {}
    for s in _train_sequences(split):
        items = s.items[-max_len:]
        user_items[s.user] = frozenset(s.items)
        if len(items) < 2:
            skipped += 1
            continue
        for sub in split_sequence(items, method):
            if len(sub) < 2:
                continue
            seqs.append(sub)
            users.append(s.user)
    return TrainingSet(seqs, users, method, strategy, skipped=skipped, user_items=user_items)


def legacy_slice(items: Sequence[int], max_len: int) -> tuple[int, ...]:
    return tuple(items)[-(max_len + 2) : -2]


def legacy_pipeline_split(original_sequences: list[UserSequence], max_len: int = 50) -> TrainingSet:
    """Replay the split-while-reading loop found in a widely copied data loader.

    Each *original* sequence (validation and test items still attached) is
    sliced to ``seq[-(max_len + 2):-2]`` and every prefix ``input_ids[:i + 1]``
    is appended. Length-1 prefixes cannot form a pair; they are dropped and
    counted in ``discarded``. The rest are single-target sequences.
    """
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    seqs, users, discarded = [], [], 0
    user_items = {}
    for s in original_sequences:
        input_ids = legacy_slice(s.items, max_len)
        user_items[s.user] = frozenset(s.items[:-2])
        prefixes = [input_ids[: i + 1] for i in range(len(input_ids))]
        for p in prefixes:
            if len(p) < 2:
                discarded += 1
                continue
            seqs.append(p)
            users.append(s.user)
    return TrainingSet(
        seqs, users, PREFIX, TargetStrategy.SINGLE, discarded=discarded, user_items=user_items
    )


def example_dump_lines(ts: TrainingSet):
    for ex in ts.examples:
        yield ",".join(map(str, ex.input)) + "\t" + str(ex.target)


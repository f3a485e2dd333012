"""Interaction-log ingestion, k-core filtering and leave-one-out partitioning."""

from __future__ import annotations

import io
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple

PADDING = 0


class ParseError(ValueError):
    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


class Interaction(NamedTuple):
    user: int
    item: int
    timestamp: int


@dataclass(frozen=True)
class Catalog:
    num_users: int
    num_items: int
    user_index: dict[int, int]
    item_index: dict[int, int]


@dataclass(frozen=True)
class UserSequence:
    user: int
    items: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.items)


@dataclass
class DatasetSplit:
    train: list[UserSequence]
    valid_target: dict[int, int]
    test_target: dict[int, int]
    num_dropped: int = 0
    num_items: int = 0

    @property
    def users(self) -> list[int]:
        return [s.user for s in self.train]


@dataclass(frozen=True)
class DatasetStats:
    users: int
    items: int
    interactions: int
    avg_length: float
    sparsity: float

    def as_line(self) -> str:
        return (
            f"users={self.users} items={self.items} interactions={self.interactions} "
            f"avg_length={self.avg_length:.2f} sparsity={self.sparsity:.4%}"
        )


def _int_field(text: str, lineno: int, name: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise ParseError(lineno, f"non-integer {name} {text!r}") from None
    if value < 0:
        raise ParseError(lineno, f"negative {name} {value}")
    return value


def parse_interactions(source, format: str = "triplet") -> list[Interaction]:
    """Parse a tab-separated interaction log.

    ``source`` may be a string, a path, or any iterable of lines. The
    ``triplet`` format holds ``user<TAB>item<TAB>timestamp`` per line; the
    ``grouped`` format holds ``user<TAB>item1,item2,...`` and gets synthetic
    timestamps 0, 1, 2, ... in listed order. Blank lines are ignored, any
    other malformed line raises :class:`ParseError`.
    """
    if format not in ("triplet", "grouped"):
        raise ValueError(f"unknown format {format!r}")
    if isinstance(source, Path):
        with source.open() as fh:
            return parse_interactions(fh, format)
    if isinstance(source, str):
        source = io.StringIO(source)

    out: list[Interaction] = []
    for lineno, line in enumerate(source, start=1):
        line = line.rstrip("\r\n")
        if not line.strip():
            continue
        parts = line.split("\t")
        if format == "triplet":
            if len(parts) != 3:
                raise ParseError(lineno, f"expected 3 tab-separated fields, got {len(parts)}")
            user = _int_field(parts[0], lineno, "user")
            item = _int_field(parts[1], lineno, "item")
            ts = _int_field(parts[2], lineno, "timestamp")
            out.append(Interaction(user, item, ts))
        else:
            if len(parts) != 2:
                raise ParseError(lineno, f"expected 2 tab-separated fields, got {len(parts)}")
            user = _int_field(parts[0], lineno, "user")
            items = [i for i in parts[1].split(",")]
            for ts, raw in enumerate(items):
                out.append(Interaction(user, _int_field(raw.strip(), lineno, "item"), ts))
    return out


def read_interactions(path: str | Path, format: str = "triplet") -> list[Interaction]:
    return parse_interactions(Path(path), format)


def k_core_filter(interactions: list[Interaction], k: int) -> list[Interaction]:
    """Drop users and items with fewer than ``k`` interactions until none remain.

    Order of the surviving interactions is preserved.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    current = list(interactions)
    while True:
        user_counts = Counter(x.user for x in current)
        item_counts = Counter(x.item for x in current)
        bad_users = {u for u, c in user_counts.items() if c < k}
        bad_items = {i for i, c in item_counts.items() if c < k}
        if not bad_users and not bad_items:
            return current
        current = [x for x in current if x.user not in bad_users and x.item not in bad_items]


def build_sequences(interactions: list[Interaction]) -> tuple[Catalog, list[UserSequence]]:
    """Re-index ids densely (first-seen order, from 1) and order each user's items by time.

    Equal timestamps keep their input order. Repeated items are kept.
    """
    user_index: dict[int, int] = {}
    item_index: dict[int, int] = {}
    per_user: dict[int, list[tuple[int, int, int]]] = {}
    for pos, x in enumerate(interactions):
        u = user_index.setdefault(x.user, len(user_index) + 1)
        v = item_index.setdefault(x.item, len(item_index) + 1)
        per_user.setdefault(u, []).append((x.timestamp, pos, v))

    sequences = []
    for u in sorted(per_user):
        events = sorted(per_user[u])
        sequences.append(UserSequence(u, tuple(v for _, _, v in events)))
    catalog = Catalog(len(user_index), len(item_index), user_index, item_index)
    return catalog, sequences


def leave_one_out(sequences: list[UserSequence], num_items: int | None = None) -> DatasetSplit:
    """Hold out the last item for test and the second-to-last for validation.

    Users with fewer than three items cannot keep a training prefix and are
    dropped (counted in ``num_dropped``).
    """
    train, valid, test = [], {}, {}
    dropped = 0
    for seq in sequences:
        if len(seq.items) < 3:
            dropped += 1
            continue
        train.append(UserSequence(seq.user, seq.items[:-2]))
        valid[seq.user] = seq.items[-2]
        test[seq.user] = seq.items[-1]
    if not train:
        raise ValueError("no trainable users")
    if num_items is None:
        num_items = max(max(s.items) for s in sequences)
    return DatasetSplit(train, valid, test, dropped, num_items)


def dataset_stats(sequences: list[UserSequence]) -> DatasetStats:
    users = len(sequences)
    items = len({v for s in sequences for v in s.items})
    n = sum(len(s.items) for s in sequences)
    avg = n / users if users else 0.0
    sparsity = 1.0 - n / (users * items) if users and items else 0.0
    return DatasetStats(users, items, n, avg, sparsity)


@dataclass
class Dataset:
    """A loaded, filtered and partitioned interaction log."""

    catalog: Catalog
    sequences: list[UserSequence]
    split: DatasetSplit
    stats: DatasetStats = field(repr=False, default=None)


def load_dataset(path: str | Path, format: str = "triplet", k: int = 5) -> Dataset:
    interactions = read_interactions(path, format)
    if k > 1:
        interactions = k_core_filter(interactions, k)
    if not interactions:
        raise ValueError(f"{path}: no interactions left after {k}-core filtering")
    catalog, sequences = build_sequences(interactions)
    split = leave_one_out(sequences, catalog.num_items)
    return Dataset(catalog, sequences, split, dataset_stats(sequences))


def iter_pairs(sequences: Iterable[UserSequence]) -> Iterable[tuple[int, int]]:
    for s in sequences:
        for v in s.items:
            yield s.user, v

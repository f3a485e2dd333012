"""Seeded synthetic interaction logs with Zipf popularity and sequential structure.

Each item has a few preferred successors. A user's next item follows one of
the current item's successors with probability ``follow``; otherwise it is a
fresh draw from the Zipf popularity law. Sequence lengths are
``min_len + Poisson(extra_len)``.
"""

from __future__ import annotations

from importlib import resources
from pathlib import Path

import numpy as np

from sssbench.corpus import Interaction

BUNDLED = "synthetic_1k.tsv"


def zipf_weights(n: int, exponent: float) -> np.ndarray:
    w = 1.0 / np.arange(1, n + 1) ** exponent
    return w / w.sum()


def generate_log(
    num_users: int = 1000,
    num_items: int = 400,
    exponent: float = 0.9,
    successors: int = 3,
    follow: float = 0.6,
    min_len: int = 5,
    extra_len: float = 6.0,
    seed: int = 7,
) -> list[Interaction]:
    rng = np.random.default_rng(seed)
    pop = zipf_weights(num_items, exponent)
    # item ids are shuffled so popularity is not aligned with id order
    ids = rng.permutation(num_items) + 1
    succ = np.array([rng.choice(num_items, size=successors, replace=False, p=pop) for _ in range(num_items)])
    succ_p = zipf_weights(successors, 1.0)

    out = []
    for u in range(num_users):
        length = min_len + rng.poisson(extra_len)
        cur = rng.choice(num_items, p=pop)
        ts = int(rng.integers(1_000_000, 2_000_000))
        for _ in range(length):
            out.append(Interaction(u + 1, int(ids[cur]), ts))
            ts += int(rng.integers(1, 10_000))
            if rng.random() < follow:
                cur = succ[cur, rng.choice(successors, p=succ_p)]
            else:
                cur = rng.choice(num_items, p=pop)
    return out


def write_log(interactions: list[Interaction], path: str | Path) -> Path:
    path = Path(path)
    with path.open("w") as fh:
        for x in interactions:
            fh.write(f"{x.user}\t{x.item}\t{x.timestamp}\n")
    return path


def bundled_dataset_path() -> Path:
    return Path(str(resources.files("sssbench.data").joinpath(BUNDLED)))

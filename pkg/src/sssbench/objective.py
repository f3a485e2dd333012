"""Training losses over tied item embeddings and the finite-difference gradient check."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

from sssbench.models.base import ModelConfig, NeuralModel
from sssbench.corpus import PADDING


@dataclass(frozen=True)
class LossKind:
    kind: str = "ce"
    num_negatives: int = 1

    def __post_init__(self):
        if self.kind not in ("ce", "bce"):
            raise ValueError(f"unknown loss {self.kind!r}")
        if self.num_negatives < 1:
            raise ValueError("num_negatives must be >= 1")

    @classmethod
    def parse(cls, text: str) -> "LossKind":
        """``ce``, ``bce`` or ``bce:<num_negatives>``."""
        kind, _, n = text.strip().lower().partition(":")
        return cls(kind, int(n) if n else 1)

    def __str__(self) -> str:
        if self.kind == "bce" and self.num_negatives != 1:
            return f"bce:{self.num_negatives}"
        return self.kind


CE = LossKind("ce")
BCE = LossKind("bce")


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def ce_batch(hidden: np.ndarray, item_embed: np.ndarray, targets: np.ndarray):
    """Summed full-catalog softmax cross-entropy for rows of ``hidden``.

    Returns ``(loss, grad_hidden, grad_item_embed)``; the padding column is
    excluded from the softmax and receives no gradient.
    """
    targets = np.asarray(targets)
    if (targets == PADDING).any():
        raise ValueError("target is the padding index")
    logits = hidden @ item_embed.T
    logits[:, PADDING] = -np.inf
    logp = log_softmax(logits)
    rows = np.arange(len(targets))
    loss = -logp[rows, targets].sum()
    dlogits = np.exp(logp)
    dlogits[rows, targets] -= 1.0
    dlogits[:, PADDING] = 0.0
    return loss, dlogits @ item_embed, dlogits.T @ hidden


def ce_loss_grad(hidden: np.ndarray, item_embed: np.ndarray, target: int):
    loss, dh, de = ce_batch(hidden[None, :], item_embed, np.array([target]))
    return float(loss), dh[0], de


def _softplus(x):
    return np.logaddexp(0.0, x)


def bce_batch(hidden: np.ndarray, item_embed: np.ndarray, targets: np.ndarray, negatives: np.ndarray):
    """Summed ``-log s(r_pos) - sum log(1 - s(r_neg))`` with ``negatives`` of shape rows x k."""
    targets = np.asarray(targets)
    negatives = np.asarray(negatives).reshape(len(targets), -1)
    pos = item_embed[targets]
    neg = item_embed[negatives]
    r_pos = (hidden * pos).sum(axis=-1)
    r_neg = np.einsum("nd,nkd->nk", hidden, neg)
    loss = _softplus(-r_pos).sum() + _softplus(r_neg).sum()
    g_pos = -0.5 * (1.0 - np.tanh(0.5 * r_pos))  # sigmoid(r) - 1
    g_neg = 0.5 * (1.0 + np.tanh(0.5 * r_neg))  # sigmoid(r)
    grad_hidden = g_pos[:, None] * pos + np.einsum("nk,nkd->nd", g_neg, neg)
    grad_embed = np.zeros_like(item_embed)
    np.add.at(grad_embed, targets, g_pos[:, None] * hidden)
    np.add.at(grad_embed, negatives.reshape(-1), (g_neg[..., None] * hidden[:, None, :]).reshape(-1, hidden.shape[1]))
    grad_embed[PADDING] = 0.0
    return loss, grad_hidden, grad_embed


def sample_negatives(rng: np.random.Generator, num_items: int, num_negatives: int, exclusion: Iterable[int] = ()):
    """Uniform draw without replacement from items 1..num_items minus ``exclusion``."""
    excluded = set(exclusion)
    excluded.add(PADDING)
    allowed = np.array([i for i in range(1, num_items + 1) if i not in excluded], dtype=np.int64)
    if len(allowed) < num_negatives:
        raise ValueError("no valid negative item available")
    return rng.choice(allowed, size=num_negatives, replace=False)


def bce_loss_grad(hidden, item_embed, target, rng, num_negatives=1, exclusion=(), negatives=None):
    """Single-row BCE with sampled (or supplied) negatives.

    The target itself is never drawn as a negative. Returns
    ``(loss, grad_hidden, grad_item_embed, negatives)``.
    """
    if target == PADDING:
        raise ValueError("target is the padding index")
    if negatives is None:
        negatives = sample_negatives(rng, item_embed.shape[0] - 1, num_negatives, set(exclusion) | {target})
    loss, dh, de = bce_batch(hidden[None, :], item_embed, np.array([target]), np.asarray(negatives)[None, :])
    return float(loss), dh[0], de, np.asarray(negatives)


def sample_negatives_batch(
    rng: np.random.Generator, excluded: np.ndarray, rows: np.ndarray, num_negatives: int
) -> np.ndarray:
    """Rejection-sample ``num_negatives`` distinct items per row.

    ``excluded`` is a boolean matrix (owners x num_items+1) and ``rows`` maps
    each target row to its owner. Column 0 must be marked excluded.
    """
    num_items = excluded.shape[1] - 1
    if (excluded[rows, 1:].sum(axis=1) > num_items - num_negatives).any():
        raise ValueError("no valid negative item available")
    out = np.zeros((len(rows), num_negatives), dtype=np.int64)
    for j in range(num_negatives):
        col = rng.integers(1, num_items + 1, size=len(rows))
        while True:
            bad = excluded[rows, col] | (out[:, :j] == col[:, None]).any(axis=1)
            if not bad.any():
                break
            col[bad] = rng.integers(1, num_items + 1, size=int(bad.sum()))
        out[:, j] = col
    return out


def model_loss_and_grads(
    model: NeuralModel,
    inputs: np.ndarray,
    targets: np.ndarray,
    loss: LossKind,
    negatives: np.ndarray | None = None,
    positions: str = "all",
    output_role: bool = True,
    input_role: bool = True,
):
    """Mean loss over all marked target positions and its parameter gradients.

    ``targets`` has the shape of ``inputs`` (``positions='all'``) or one entry
    per row (``'last'``); zeros mark unsupervised positions. For BCE,
    ``negatives`` holds one row of negatives per supervised position in
    row-major order. The ``*_role`` switches exist for gradient ablations.
    """
    hidden, cache = model.forward(inputs, positions)
    targets = np.asarray(targets)
    if positions == "last":
        sel = np.nonzero(targets)[0]
        rows_hidden = hidden[sel]
    else:
        sel = np.nonzero(targets)
        rows_hidden = hidden[sel]
    tgt = targets[sel]
    n = len(tgt)
    if n == 0:
        raise ValueError("no supervised positions")
    emb = model.params["item_embed"]
    if loss.kind == "ce":
        total, dh_rows, de_out = ce_batch(rows_hidden, emb, tgt)
    else:
        if negatives is None:
            raise ValueError("BCE needs explicit negatives here")
        total, dh_rows, de_out = bce_batch(rows_hidden, emb, tgt, negatives)
    value = total / n
    dhidden = np.zeros_like(hidden)
    dhidden[sel] = dh_rows / n
    grads = model.backward(cache, dhidden)
    if not input_role:
        grads["item_embed"] = np.zeros_like(grads["item_embed"])
    if output_role:
        grads["item_embed"] = grads["item_embed"] + de_out / n
    grads["item_embed"][PADDING] = 0.0
    return value, grads


@dataclass
class GradCheckReport:
    max_rel_error: dict[str, float]
    coords_checked: dict[str, int]

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values())

    def passed(self, tolerance: float) -> bool:
        return self.worst <= tolerance


def finite_diff_check(
    loss_fn: Callable[[dict], float],
    params: dict[str, np.ndarray],
    analytic: dict[str, np.ndarray],
    step: float = 1e-5,
    max_coords: int = 200,
    seed: int = 0,
) -> GradCheckReport:
    """Compare ``analytic`` against central differences of ``loss_fn``.

    Vectors (biases, norm gains) are checked at every coordinate; matrices at
    every coordinate up to ``max_coords`` and a random subsample of that size
    beyond. Relative error uses ``max(|a|, |n|, 1e-8)`` as denominator.
    """
    rng = np.random.default_rng(seed)
    errors, counts = {}, {}
    for name in sorted(params):
        theta = params[name]
        flat = theta.reshape(-1)
        if theta.ndim == 1 or flat.size <= max_coords:
            coords = np.arange(flat.size)
        else:
            coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
        worst = 0.0
        for c in coords:
            orig = flat[c]
            flat[c] = orig + step
            up = loss_fn(params)
            flat[c] = orig - step
            down = loss_fn(params)
            flat[c] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise FloatingPointError(f"non-finite loss while perturbing {name}[{c}]")
            numeric = (up - down) / (2 * step)
            a = analytic[name].reshape(-1)[c]
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, rel)
        errors[name] = float(worst)
        counts[name] = int(len(coords))
    return GradCheckReport(errors, counts)


def check_model_gradients(
    kind: str,
    loss: LossKind,
    d: int = 8,
    num_items: int = 20,
    seq_len: int = 6,
    batch: int = 3,
    seed: int = 0,
    step: float = 1e-5,
    num_blocks: int = 1,
    num_heads: int = 1,
    param_scale: float = 1.0,
    positions: str = "all",
) -> GradCheckReport:
    """Finite-difference check of a tiny double-precision model on random data.

    Every real position is supervised (``positions='all'``) or only the last
    one (``'last'``); BCE negatives are drawn once and then frozen for the
    whole check.
    """
    from sssbench.models import build_model

    rng = np.random.default_rng(seed)
    config = ModelConfig(
        kind, num_items, d=d, max_len=seq_len, seed=seed, num_blocks=num_blocks,
        num_heads=num_heads, dtype="float64",
    )
    model = build_model(config)
    # a generic point at unit scale: at the small init scale some true
    # gradients sit near 1e-8, where central-difference round-off dominates
    for name, value in model.params.items():
        if value.ndim == 1:
            value += rng.uniform(-0.5, 0.5, size=value.shape)
        else:
            value[...] = rng.uniform(-param_scale, param_scale, size=value.shape)
    model.params["item_embed"][0] = 0.0
    inputs = np.zeros((batch, seq_len), dtype=np.int64)
    targets = np.zeros_like(inputs)
    for b in range(batch):
        length = seq_len - b % max(1, seq_len - 1)
        seq = rng.integers(1, num_items + 1, size=length + 1)
        inputs[b, seq_len - length :] = seq[:-1]
        targets[b, seq_len - length :] = seq[1:]
    if positions == "last":
        targets = targets[:, -1]
    negatives = None
    if loss.kind == "bce":
        n = int((targets != 0).sum())
        negatives = rng.integers(1, num_items + 1, size=(n, loss.num_negatives))

    def f(params):
        saved = model.params
        model.params = params
        try:
            value, _ = model_loss_and_grads(model, inputs, targets, loss, negatives, positions)
        finally:
            model.params = saved
        return value

    _, analytic = model_loss_and_grads(model, inputs, targets, loss, negatives, positions)
    return finite_diff_check(f, model.params, analytic, step=step, seed=seed)

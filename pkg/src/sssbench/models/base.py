from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

LN_EPS = 1e-8


@dataclass
class ModelConfig:
    kind: str
    num_items: int
    d: int = 64
    max_len: int = 50
    num_blocks: int = 1
    num_heads: int = 1
    d_ff: int | None = None
    seed: int = 0
    dtype: str = "float64"

    def __post_init__(self):
        if self.d_ff is None:
            self.d_ff = self.d
        if self.kind == "attn" and self.d % self.num_heads:
            raise ValueError("d must be divisible by num_heads")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ForwardCache:
    """Activations saved by a forward pass for the matching backward pass."""

    kind: str
    inputs: np.ndarray
    positions: str
    acts: dict = field(default_factory=dict)


def uniform_init(rng: np.random.Generator, shape, d: int, dtype) -> np.ndarray:
    bound = 0.5 / np.sqrt(d)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def left_pad(contexts: Sequence[Sequence[int]], max_len: int) -> np.ndarray:
    out = np.zeros((len(contexts), max_len), dtype=np.int64)
    for i, ctx in enumerate(contexts):
        ctx = list(ctx)[-max_len:]
        if ctx:
            out[i, max_len - len(ctx) :] = ctx
    return out


def trim_padding(inputs: np.ndarray, targets: np.ndarray | None = None):
    """Drop leading columns that are padding in every row.

    Rows are right-aligned, so this only removes positions that are masked
    anyway; the models map the remaining columns to the last positions.
    """
    real = (inputs != 0).any(axis=0)
    first = int(np.argmax(real)) if real.any() else inputs.shape[1] - 1
    if targets is not None and targets.ndim == 2:
        return inputs[:, first:], targets[:, first:]
    return inputs[:, first:], targets


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def layer_norm(x, gain, bias):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + LN_EPS)
    xhat = xc * inv
    return xhat * gain + bias, (xhat, inv)


def layer_norm_backward(dy, gain, saved):
    xhat, inv = saved
    lead = tuple(range(dy.ndim - 1))
    dgain = (dy * xhat).sum(axis=lead)
    dbias = dy.sum(axis=lead)
    dxhat = dy * gain
    dx = inv * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )
    return dx, dgain, dbias


def scatter_rows(num_rows: int, index: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Sum ``values`` rows into a ``num_rows`` x d matrix at ``index`` (fixed order)."""
    out = np.zeros((num_rows, values.shape[-1]), dtype=values.dtype)
    np.add.at(out, index.reshape(-1), values.reshape(-1, values.shape[-1]))
    return out


class NeuralModel:
    """Common surface of the trainable scorers: forward, backward, score."""

    kind = ""

    def __init__(self, config: ModelConfig, params: dict[str, np.ndarray] | None = None):
        self.config = config
        self.params = params if params is not None else self.init_params(config)

    @staticmethod
    def init_params(config: ModelConfig) -> dict[str, np.ndarray]:
        raise NotImplementedError

    def forward(self, inputs: np.ndarray, positions: str = "last"):
        raise NotImplementedError

    def backward(self, cache: ForwardCache, grad_hidden: np.ndarray) -> dict[str, np.ndarray]:
        raise NotImplementedError

    @property
    def num_items(self) -> int:
        return self.config.num_items

    def hidden_last(self, contexts: Sequence[Sequence[int]]) -> np.ndarray:
        inputs, _ = trim_padding(left_pad(contexts, self.config.max_len))
        hidden, _ = self.forward(inputs, "last")
        return hidden

    def score(self, contexts: Sequence[Sequence[int]]) -> np.ndarray:
        scores = self.hidden_last(contexts) @ self.params["item_embed"].T
        scores[:, 0] = -np.inf
        return scores

    def copy_params(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.params.items()}


def check_inputs(inputs: np.ndarray, max_len: int | None = None) -> np.ndarray:
    inputs = np.asarray(inputs)
    if inputs.ndim == 1:
        inputs = inputs[None, :]
    if inputs.ndim != 2:
        raise ValueError("inputs must be a batch x length matrix of item ids")
    if max_len is not None and inputs.shape[1] > max_len:
        raise ValueError(f"input length {inputs.shape[1]} exceeds max_len {max_len}")
    if not (inputs != 0).any(axis=1).all():
        raise ValueError("input row contains only padding")
    return inputs

"""Mini-batch training with Adam and validation-based early stopping."""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from sssbench.augment import TargetStrategy, TrainingExample, TrainingSet
from sssbench.corpus import PADDING, DatasetSplit
from sssbench.evaluation import METRIC_NAMES, evaluate
from sssbench.models import COUNTING_KINDS, NEURAL_KINDS, ModelConfig, build_model, fit_counting_model
from sssbench.models.base import trim_padding
from sssbench.models.checkpoint import save_checkpoint
from sssbench.objective import CE, LossKind, model_loss_and_grads, sample_negatives_batch

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    d: int = 64
    max_len: int = 50
    batch_size: int = 256
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    adam_epsilon: float = 1e-8
    patience: int = 20
    max_epochs: int = 500
    seed: int = 0
    loss: LossKind = CE
    early_stop_metric: str = "N@10"
    num_blocks: int = 1
    num_heads: int = 1
    dtype: str = "float64"
    filter_seen: bool = False
    # a batch loss this many times the uniform-guess loss counts as divergence
    divergence_factor: float = 100.0

    def __post_init__(self):
        if isinstance(self.loss, str):
            self.loss = LossKind.parse(self.loss)
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("beta1 and beta2 must lie in [0, 1)")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if not self.divergence_factor > 1:
            raise ValueError("divergence_factor must exceed 1")
        if self.early_stop_metric not in METRIC_NAMES:
            raise ValueError(f"early_stop_metric must be one of {METRIC_NAMES}")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["loss"] = str(self.loss)
        return out


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params: dict[str, np.ndarray]) -> "AdamState":
        return cls({k: np.zeros_like(p) for k, p in params.items()}, {k: np.zeros_like(p) for k, p in params.items()})


def adam_step(params, grads, state: AdamState, config: TrainConfig):
    """One bias-corrected Adam update, in place; returns ``(params, state)``."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingDiverged(f"diverged: non-finite gradient in {name}")
    state.t += 1
    b1, b2 = config.beta1, config.beta2
    bc1 = 1.0 - b1**state.t
    bc2 = 1.0 - b2**state.t
    for name in sorted(params):
        g = grads[name]
        if g.shape != params[name].shape:
            raise ValueError(f"gradient shape mismatch for {name}")
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        params[name] -= config.lr * (m / bc1) / (np.sqrt(v / bc2) + config.adam_epsilon)
    if "item_embed" in params:
        params["item_embed"][PADDING] = 0.0
    return params, state


def pad_batch(examples: Sequence[TrainingExample], max_len: int):
    """Left-pad example inputs; the target sits at the last column."""
    inputs = np.zeros((len(examples), max_len), dtype=np.int64)
    targets = np.zeros_like(inputs)
    for i, ex in enumerate(examples):
        x = ex.input[-max_len:]
        inputs[i, max_len - len(x) :] = x
        targets[i, -1] = ex.target
    return inputs, targets


def pad_sequences(seqs: Sequence[Sequence[int]], max_len: int, strategy: TargetStrategy):
    """Left-pad ``seq[:-1]``; targets mark the last position (single) or every real one (multi)."""
    inputs = np.zeros((len(seqs), max_len), dtype=np.int64)
    targets = np.zeros_like(inputs)
    for i, seq in enumerate(seqs):
        seq = tuple(seq)[-(max_len + 1) :]
        x, y = seq[:-1], seq[1:]
        inputs[i, max_len - len(x) :] = x
        if strategy == TargetStrategy.MULTI:
            targets[i, max_len - len(y) :] = y
        else:
            targets[i, -1] = y[-1]
    return inputs, targets


@dataclass
class TrainReport:
    model: str
    epochs: int
    best_metric: float
    best_epoch: int
    seconds: float
    checkpoint: str | None = None
    history: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def uniform_guess_loss(loss: LossKind, num_items: int) -> float:
    """Per-position loss of a model that scores every item equally."""
    if loss.kind == "ce":
        return float(np.log(num_items))
    return float((1 + loss.num_negatives) * np.log(2.0))


def _batch_exclusions(ts: TrainingSet, batch_units: np.ndarray, num_items: int) -> np.ndarray:
    excluded = np.zeros((len(batch_units), num_items + 1), dtype=bool)
    excluded[:, PADDING] = True
    for row, unit in enumerate(batch_units):
        user = ts.users[unit]
        items = ts.user_items.get(user) or ts.sequences[unit]
        excluded[row, list(items)] = True
    return excluded


def train_model(
    kind: str,
    train: TrainingSet,
    split: DatasetSplit,
    config: TrainConfig,
    num_items: int | None = None,
    validate: Callable | None = None,
    checkpoint: str | None = None,
    provenance: dict | None = None,
):
    """Fit a model and return ``(model, TrainReport)``.

    Neural models are trained epoch by epoch on shuffled batches and
    evaluated on the validation targets after each epoch; training stops
    after ``patience`` epochs without improvement and the best epoch's
    parameters are returned. Counting models are fitted in one pass.
    ``validate(model) -> float`` overrides the validation metric.
    """
    start = time.perf_counter()
    num_items = num_items or split.num_items
    if len(train) == 0:
        raise ValueError("empty training set")
    if validate is None:
        def validate(m):
            rep = evaluate(m, split, "valid", config.max_len, config.filter_seen)
            return rep[config.early_stop_metric]

    if kind in COUNTING_KINDS:
        model = fit_counting_model(train, kind, num_items)
        metric = float(validate(model))
        report = TrainReport(kind, 0, metric, 0, time.perf_counter() - start)
        if checkpoint:
            save_checkpoint(checkpoint, model, provenance)
            report.checkpoint = str(checkpoint)
        return model, report
    if kind not in NEURAL_KINDS:
        raise ValueError(f"unknown model kind {kind!r}")

    mconf = ModelConfig(
        kind, num_items, d=config.d, max_len=config.max_len, num_blocks=config.num_blocks,
        num_heads=config.num_heads, seed=config.seed, dtype=config.dtype,
    )
    model = build_model(mconf)
    state = AdamState.zeros_like(model.params)
    rng = np.random.default_rng(config.seed)
    inputs, targets = pad_sequences(train.sequences, config.max_len, train.strategy)
    positions = "last" if train.strategy == TargetStrategy.SINGLE else "all"
    if positions == "last":
        targets = targets[:, -1]
    n = len(inputs)
    blowup = config.divergence_factor * uniform_guess_loss(config.loss, num_items)

    best_metric, best_epoch, best_params = -np.inf, 0, model.copy_params()
    history = []
    epoch = 0
    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(n)
        total, batches = 0.0, 0
        for lo in range(0, n, config.batch_size):
            units = order[lo : lo + config.batch_size]
            x, y = trim_padding(inputs[units], targets[units])
            negatives = None
            if config.loss.kind == "bce":
                excluded = _batch_exclusions(train, units, num_items)
                owner = np.nonzero(y)[0]
                negatives = sample_negatives_batch(rng, excluded, owner, config.loss.num_negatives)
            value, grads = model_loss_and_grads(model, x, y, config.loss, negatives, positions)
            if not np.isfinite(value):
                raise TrainingDiverged(f"diverged: non-finite loss at epoch {epoch}")
            if value > blowup:
                raise TrainingDiverged(f"diverged: loss {value:.4g} exceeds {blowup:.4g} at epoch {epoch}")
            adam_step(model.params, grads, state, config)
            total += value
            batches += 1
        metric = float(validate(model))
        history.append({"epoch": epoch, "loss": float(total / batches), config.early_stop_metric: metric})
        log.debug("epoch %d loss %.5f valid %s %.5f", epoch, total / batches, config.early_stop_metric, metric)
        if metric > best_metric:
            best_metric, best_epoch, best_params = metric, epoch, model.copy_params()
        elif epoch - best_epoch >= config.patience:
            break

    model.params = best_params
    report = TrainReport(kind, epoch, best_metric, best_epoch, time.perf_counter() - start, history=history)
    if checkpoint:
        save_checkpoint(checkpoint, model, provenance)
        report.checkpoint = str(checkpoint)
    return model, report

"""Config-driven grid over model x split x target x loss x seed.

A grid config is an INI file::

    [grid]
    dataset = data/log.tsv
    models = attn, gru
    splits = original, prefix, suffix, sliding:8
    targets = single, multi
    losses = ce, bce
    seeds = 0, 1, 2

    [train]
    d = 64
    patience = 20

    [cell.3]
    lr = 10

``[train]`` overrides trainer defaults for every cell and ``[cell.N]``
overrides them for cell N only. Lists may also be written ``[a, b]``.
"""

from __future__ import annotations

import configparser
import csv
import dataclasses
import io
import itertools
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from sssbench import __version__
from sssbench.augment import SplitMethod, TargetStrategy, build_training_set
from sssbench.corpus import Dataset, load_dataset
from sssbench.evaluation import METRIC_NAMES, MetricReport, evaluate
from sssbench.models import MODEL_KINDS
from sssbench.models.checkpoint import config_hash
from sssbench.objective import LossKind
from sssbench.trainer import TrainConfig, TrainingDiverged, TrainReport, train_model

log = logging.getLogger(__name__)

RESULTS_HEADER = (
    "dataset", "model", "split", "window", "target", "loss", "seed",
    *METRIC_NAMES, "epochs", "seconds",
)
IMPROVEMENT_NOTE = "# improvement = mean over H@10,N@10,H@20,N@20 of (best - worst) / worst"
TRAIN_FIELDS = {f.name: f for f in dataclasses.fields(TrainConfig)}


class ConfigError(ValueError):
    pass


def _split_list(text: str) -> list[str]:
    text = text.strip()
    if text.startswith("[") and text.endswith("]"):
        text = text[1:-1]
    return [x.strip().strip("'\"") for x in text.split(",") if x.strip()]


def _coerce(name: str, raw: str):
    if name not in TRAIN_FIELDS:
        raise ConfigError(f"unknown training option {name!r}")
    default = TRAIN_FIELDS[name].default
    if name == "loss":
        return raw.strip()
    if isinstance(default, bool):
        if raw.strip().lower() not in ("true", "false", "1", "0", "yes", "no"):
            raise ConfigError(f"{name}: expected a boolean, got {raw!r}")
        return raw.strip().lower() in ("true", "1", "yes")
    try:
        return type(default)(raw.strip())
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {raw!r}") from None


@dataclass
class GridConfig:
    dataset: str
    models: list[str]
    splits: list[SplitMethod]
    targets: list[TargetStrategy]
    losses: list[LossKind]
    seeds: list[int]
    format: str = "triplet"
    kcore: int = 5
    train: dict = field(default_factory=dict)
    cell_overrides: dict[int, dict] = field(default_factory=dict)
    workers: int = 1
    record_time: bool = False

    def __post_init__(self):
        for name in ("models", "splits", "targets", "losses", "seeds"):
            if not getattr(self, name):
                raise ConfigError(f"axis {name!r} is empty")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be distinct")
        for m in self.models:
            if m not in MODEL_KINDS:
                raise ConfigError(f"unknown model {m!r}; choose from {MODEL_KINDS}")
        for overrides in [self.train, *self.cell_overrides.values()]:
            for k in overrides:
                if k not in TRAIN_FIELDS or k in ("seed", "loss"):
                    raise ConfigError(f"unknown training option {k!r}")
        for overrides in [self.train, *self.cell_overrides.values()]:
            try:
                TrainConfig(**{**self.train, **overrides})
            except ValueError as e:
                raise ConfigError(str(e)) from None
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    @classmethod
    def from_text(cls, text: str, base_dir: str | Path | None = None) -> "GridConfig":
        cp = configparser.ConfigParser(interpolation=None)
        try:
            cp.read_string(text)
        except configparser.Error as e:
            raise ConfigError(str(e)) from None
        if not cp.has_section("grid"):
            raise ConfigError("missing [grid] section")
        g = cp["grid"]
        if "dataset" not in g:
            raise ConfigError("[grid] needs a dataset")
        dataset = Path(g["dataset"])
        if base_dir is not None and not dataset.is_absolute():
            dataset = Path(base_dir) / dataset
        known = {"dataset", "format", "kcore", "models", "splits", "targets", "losses",
                 "seeds", "workers", "record_time"}
        extra = set(g) - known
        if extra:
            raise ConfigError(f"unknown [grid] keys: {sorted(extra)}")
        try:
            splits = [SplitMethod.parse(s) for s in _split_list(g.get("splits", "original"))]
            targets = [TargetStrategy(t) for t in _split_list(g.get("targets", "single"))]
            losses = [LossKind.parse(x) for x in _split_list(g.get("losses", "ce"))]
            seeds = [int(x) for x in _split_list(g.get("seeds", "0"))]
            kcore = g.getint("kcore", 5)
            workers = g.getint("workers", 1)
            record_time = g.getboolean("record_time", False)
        except ValueError as e:
            raise ConfigError(str(e)) from None
        train = {k: _coerce(k, v) for k, v in cp["train"].items()} if cp.has_section("train") else {}
        cells = {}
        for sec in cp.sections():
            if sec.startswith("cell."):
                try:
                    idx = int(sec[5:])
                except ValueError:
                    raise ConfigError(f"bad section name [{sec}]") from None
                cells[idx] = {k: _coerce(k, v) for k, v in cp[sec].items()}
        return cls(
            dataset=str(dataset), format=g.get("format", "triplet"), kcore=kcore,
            models=_split_list(g.get("models", "attn")), splits=splits, targets=targets,
            losses=losses, seeds=seeds, train=train, cell_overrides=cells,
            workers=workers, record_time=record_time,
        )

    @classmethod
    def load(cls, path: str | Path) -> "GridConfig":
        path = Path(path)
        return cls.from_text(path.read_text(), base_dir=path.parent)

    def to_dict(self) -> dict:
        return {
            "dataset": self.dataset, "format": self.format, "kcore": self.kcore,
            "models": list(self.models), "splits": [str(s) for s in self.splits],
            "targets": [str(t) for t in self.targets], "losses": [str(x) for x in self.losses],
            "seeds": list(self.seeds), "train": dict(sorted(self.train.items())),
            "cell_overrides": {str(k): dict(sorted(v.items())) for k, v in sorted(self.cell_overrides.items())},
            "record_time": self.record_time,
        }

    def hash(self) -> str:
        return config_hash(self.to_dict())

    def cells(self) -> list["Cell"]:
        """Every cell in axis order; the seed axis varies fastest."""
        out = []
        combos = itertools.product(self.models, self.splits, self.targets, self.losses)
        for setting, (model, split, target, loss) in enumerate(combos):
            for seed in self.seeds:
                out.append(Cell(len(out), setting, model, split, target, loss, seed))
        return out


@dataclass(frozen=True)
class Cell:
    index: int
    setting: int  # position of (model, split, target, loss) in axis order
    model: str
    split: SplitMethod
    target: TargetStrategy
    loss: LossKind
    seed: int

    def derived_seed(self) -> int:
        return int(np.random.SeedSequence([self.seed, self.index]).generate_state(1)[0])


@dataclass
class CellResult:
    cell: Cell
    metrics: MetricReport | None = None
    train: TrainReport | None = None
    error: str | None = None
    seconds: float = 0.0

    @property
    def ok(self) -> bool:
        return self.error is None


@dataclass
class GridResult:
    config: GridConfig
    dataset_name: str
    cells: list[CellResult]
    manifest: dict

    @property
    def successful(self) -> list[CellResult]:
        return [c for c in self.cells if c.ok]

    @property
    def failed(self) -> list[CellResult]:
        return [c for c in self.cells if not c.ok]

    def results_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(RESULTS_HEADER)
        for r in self.successful:
            c = r.cell
            window = c.split.window if c.split.kind == "sliding" else ""
            seconds = f"{r.seconds:.3f}" if self.config.record_time else ""
            w.writerow([
                self.dataset_name, c.model, c.split.kind, window, str(c.target), str(c.loss), c.seed,
                *(f"{r.metrics[m]:.6f}" for m in METRIC_NAMES), r.train.epochs, seconds,
            ])
        return buf.getvalue()


def _run_cell(cell: Cell, dataset: Dataset, config: GridConfig) -> CellResult:
    start = time.perf_counter()
    overrides = {**config.train, **config.cell_overrides.get(cell.index, {})}
    try:
        tc = TrainConfig(**overrides, seed=cell.derived_seed(), loss=cell.loss)
        ts = build_training_set(dataset.split, cell.split, cell.target, tc.max_len)
        model, report = train_model(cell.model, ts, dataset.split, tc, dataset.catalog.num_items)
        metrics = evaluate(model, dataset.split, "test", tc.max_len, tc.filter_seen)
        metrics.check_invariants()
    except (TrainingDiverged, ValueError, FloatingPointError, ArithmeticError) as e:
        log.warning("cell %d failed: %s", cell.index, e)
        return CellResult(cell, error=f"{type(e).__name__}: {e}", seconds=time.perf_counter() - start)
    return CellResult(cell, metrics, report, seconds=time.perf_counter() - start)


def _run_cell_star(args):
    return _run_cell(*args)


def run_grid(config: GridConfig, out_dir: str | Path | None = None, dataset: Dataset | None = None) -> GridResult:
    """Run every cell; failures are recorded per cell, never raised.

    The dataset is loaded (and the config validated) before any cell runs.
    Results are assembled in cell order whatever the worker count.
    """
    if dataset is None:
        dataset = load_dataset(config.dataset, config.format, config.kcore)
    cells = config.cells()
    log.info("grid: %d cells on %s", len(cells), config.dataset)
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(_run_cell_star, [(c, dataset, config) for c in cells]))
    else:
        results = []
        for c in cells:
            results.append(_run_cell(c, dataset, config))
            log.info("cell %d/%d done", c.index + 1, len(cells))
    manifest = {
        "toolkit": "sssbench",
        "version": __version__,
        "config_hash": config.hash(),
        "config": config.to_dict(),
        "dataset_stats": dataclasses.asdict(dataset.stats),
        "cells": len(cells),
        "failed": len([r for r in results if not r.ok]),
    }
    result = GridResult(config, Path(config.dataset).stem, results, manifest)
    if out_dir is not None:
        write_grid(result, out_dir)
    return result


def write_grid(result: GridResult, out_dir: str | Path) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "results.csv").write_text(result.results_csv())
    (out / "manifest.json").write_text(json.dumps(result.manifest, indent=2, sort_keys=True) + "\n")
    with (out / "failures.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cell", "model", "split", "target", "loss", "seed", "reason"])
        for r in result.failed:
            c = r.cell
            w.writerow([c.index, c.model, str(c.split), str(c.target), str(c.loss), c.seed, r.error])
    # wall-clock times vary between runs, so they live outside results.csv
    with (out / "timings.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cell", "seconds"])
        for r in result.cells:
            w.writerow([r.cell.index, f"{r.seconds:.3f}"])
    summary = summarize(result) if result.successful else None
    if summary is not None:
        summary.write(out)
    return out


@dataclass
class SettingScore:
    """Seed-averaged metrics of one (dataset, model, split, target, loss) setting."""

    dataset: str
    model: str
    setting: int
    split: SplitMethod
    target: TargetStrategy
    loss: LossKind
    metrics: dict[str, float]

    @property
    def label(self) -> str:
        return f"{self.split}/{self.target}/{self.loss}"

    @property
    def mean(self) -> float:
        return float(np.mean([self.metrics[m] for m in METRIC_NAMES]))


def improvement(best: dict[str, float], worst: dict[str, float]) -> float:
    """Mean over the four metrics of (best - worst) / worst."""
    ratios = []
    for m in METRIC_NAMES:
        if worst[m] == 0:
            ratios.append(0.0 if best[m] == 0 else float("inf"))
        else:
            ratios.append((best[m] - worst[m]) / worst[m])
    return float(np.mean(ratios))


@dataclass
class Summary:
    best_worst: list[dict]
    winners: list[dict]

    def write(self, out_dir: str | Path) -> None:
        out = Path(out_dir)
        with (out / "best_worst.csv").open("w", newline="") as fh:
            fh.write(IMPROVEMENT_NOTE + "\n")
            w = csv.DictWriter(fh, fieldnames=list(self.best_worst[0]), lineterminator="\n")
            w.writeheader()
            w.writerows(self.best_worst)
        with (out / "winners.csv").open("w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(self.winners[0]), lineterminator="\n")
            w.writeheader()
            w.writerows(self.winners)


def setting_scores(results) -> list[SettingScore]:
    groups: dict[tuple, list[CellResult]] = {}
    for res in results:
        for r in res.successful:
            c = r.cell
            groups.setdefault((res.dataset_name, c.model, c.setting), []).append(r)
    out = []
    for (ds, model, setting), rs in groups.items():
        c = rs[0].cell
        metrics = {m: float(np.mean([r.metrics[m] for r in rs])) for m in METRIC_NAMES}
        out.append(SettingScore(ds, model, setting, c.split, c.target, c.loss, metrics))
    return out


def summarize(results) -> Summary:
    """Best/worst setting per model and best/second-best tallies per setting.

    Settings are ranked by their seed-averaged metrics. Best and worst use
    the mean of the four metrics; the tallies rank settings separately for
    every (dataset, model, metric) column. Ties go to the earlier setting in
    axis order.
    """
    if isinstance(results, GridResult):
        results = [results]
    scores = setting_scores(results)
    if not scores:
        raise ValueError("no successful cells to summarize")

    by_model: dict[tuple, list[SettingScore]] = {}
    for s in scores:
        by_model.setdefault((s.dataset, s.model), []).append(s)

    best_worst = []
    tally: dict[tuple, list[int]] = {}
    labels: dict[tuple, SettingScore] = {}
    for key in by_model:
        group = sorted(by_model[key], key=lambda s: s.setting)
        best = min(group, key=lambda s: (-s.mean, s.setting))
        worst = min(group, key=lambda s: (s.mean, s.setting))
        best_worst.append({
            "dataset": key[0], "model": key[1],
            "best": best.label, "worst": worst.label,
            **{f"best_{m}": f"{best.metrics[m]:.6f}" for m in METRIC_NAMES},
            **{f"worst_{m}": f"{worst.metrics[m]:.6f}" for m in METRIC_NAMES},
            "improvement": f"{improvement(best.metrics, worst.metrics):.6f}",
        })
        for m in METRIC_NAMES:
            ranked = sorted(group, key=lambda s: (-s.metrics[m], s.setting))
            for place, s in enumerate(ranked[:2]):
                k = (s.split, s.target, s.loss)
                labels.setdefault(k, s)
                tally.setdefault(k, [0, 0])[place] += 1
    order = sorted(labels, key=lambda k: labels[k].setting)
    winners = [
        {
            "split": k[0].kind, "window": k[0].window if k[0].kind == "sliding" else "",
            "target": str(k[1]), "loss": str(k[2]), "best": tally[k][0], "second": tally[k][1],
        }
        for k in order
    ]
    return Summary(best_worst, winners)

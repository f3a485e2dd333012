from collections import Counter

import numpy as np
import pytest

from sssbench.augment import ORIGINAL, PREFIX, TargetStrategy, TrainingExample, build_training_set, expand_targets
from sssbench.corpus import UserSequence, leave_one_out
from sssbench.evaluation import evaluate, ranks_of_targets
from sssbench.models import load_checkpoint
from sssbench.objective import BCE, CE
from sssbench.trainer import (
    AdamState,
    TrainConfig,
    TrainingDiverged,
    adam_step,
    pad_batch,
    pad_sequences,
    train_model,
    uniform_guess_loss,
)

SINGLE, MULTI = TargetStrategy.SINGLE, TargetStrategy.MULTI


class TestConfig:
    def test_defaults(self):
        c = TrainConfig()
        assert (c.d, c.max_len, c.batch_size, c.lr, c.beta1, c.beta2, c.adam_epsilon) == (
            64, 50, 256, 0.001, 0.9, 0.999, 1e-8)
        assert (c.patience, c.max_epochs, c.loss, c.early_stop_metric) == (20, 500, CE, "N@10")

    @pytest.mark.parametrize("bad", [dict(lr=0), dict(beta1=1.0), dict(beta2=-0.1), dict(patience=0),
                                     dict(early_stop_metric="MRR"), dict(loss="hinge")])
    def test_invalid(self, bad):
        with pytest.raises(ValueError):
            TrainConfig(**bad)

    def test_loss_string(self):
        assert TrainConfig(loss="bce:2").to_dict()["loss"] == "bce:2"


class TestPadding:
    def test_single_example(self):
        x, y = pad_batch([TrainingExample((1, 2), 3)], 4)
        assert x.tolist() == [[0, 0, 1, 2]] and y.tolist() == [[0, 0, 0, 3]]

    def test_empty(self):
        x, y = pad_batch([], 4)
        assert x.shape == (0, 4) and y.shape == (0, 4)

    def test_multi_sequence(self):
        x, y = pad_sequences([(1, 2, 3)], 4, MULTI)
        assert x.tolist() == [[0, 0, 1, 2]] and y.tolist() == [[0, 0, 2, 3]]

    def test_multi_matches_expand_targets(self, rng):
        seqs = [tuple(rng.integers(1, 9, size=rng.integers(2, 12))) for _ in range(50)]
        x, y = pad_sequences(seqs, 12, MULTI)
        got = Counter()
        for row, tgt in zip(x, y):
            for j in np.nonzero(tgt)[0]:
                got[(tuple(int(v) for v in row[: j + 1] if v), int(tgt[j]))] += 1
        want = Counter(e for s in seqs for e in expand_targets(s, MULTI))
        assert got == want

    def test_single_sequence(self):
        x, y = pad_sequences([(4, 5, 6)], 3, SINGLE)
        assert x.tolist() == [[0, 4, 5]] and y.tolist() == [[0, 0, 6]]


class TestAdam:
    def test_first_step_closed_form(self):
        cfg = TrainConfig(lr=0.01)
        g = np.array([0.3, -2.0, 1e-9])
        p = {"w": np.array([1.0, 1.0, 1.0])}
        adam_step(p, {"w": g.copy()}, AdamState.zeros_like(p), cfg)
        # m_hat = g and v_hat = g^2 at t = 1
        np.testing.assert_allclose(p["w"], 1.0 - 0.01 * g / (np.abs(g) + 1e-8), rtol=0, atol=1e-15)

    def test_zero_gradient(self):
        p = {"w": np.array([0.5, -0.25])}
        state = AdamState.zeros_like(p)
        for _ in range(10):
            adam_step(p, {"w": np.zeros(2)}, state, TrainConfig())
        assert p["w"].tolist() == [0.5, -0.25] and state.t == 10

    def test_replay(self, rng):
        grads = [rng.normal(size=(3, 2)) for _ in range(5)]
        runs = []
        for _ in range(2):
            p = {"item_embed": np.ones((3, 2))}
            s = AdamState.zeros_like(p)
            for g in grads:
                adam_step(p, {"item_embed": g.copy()}, s, TrainConfig())
            runs.append(p["item_embed"])
        assert np.array_equal(*runs)
        assert not runs[0][0].any()

    def test_non_finite(self):
        p = {"w": np.zeros(2)}
        with pytest.raises(TrainingDiverged, match="diverged"):
            adam_step(p, {"w": np.array([np.inf, 0.0])}, AdamState.zeros_like(p), TrainConfig())


def transition_split(num_users=150, num_items=12, seed=0):
    """Random sequences in which item 2 always follows item 1; every test target follows a 1."""
    rng = np.random.default_rng(seed)
    seqs = []
    for u in range(1, num_users + 1):
        items = []
        while len(items) < 6:
            v = int(rng.integers(3, num_items + 1))
            items.append(v)
            if rng.random() < 0.4:
                items += [1, 2]
        items += [int(rng.integers(3, num_items + 1)), 1, 2]
        seqs.append(UserSequence(u, tuple(items)))
    return leave_one_out(seqs, num_items)


class TestTraining:
    def cfg(self, **kw):
        base = dict(d=16, max_len=20, batch_size=64, patience=3, max_epochs=30, seed=0)
        base.update(kw)
        return TrainConfig(**base)

    def test_early_stop_rule(self, small):
        ts = build_training_set(small.split, ORIGINAL, SINGLE, 20)
        values = iter([0.5, 0.4, 0.3, 0.2])
        model, rep = train_model("gru", ts, small.split, self.cfg(patience=1), validate=lambda m: next(values))
        assert rep.epochs == 2 and rep.best_epoch == 1 and rep.best_metric == 0.5

    def test_restores_best_epoch(self, small):
        ts = build_training_set(small.split, ORIGINAL, SINGLE, 20)
        snapshots = []

        def validate(m):
            snapshots.append(m.copy_params())
            return [0.1, 0.3, 0.2, 0.2][len(snapshots) - 1]

        model, rep = train_model("gru", ts, small.split, self.cfg(patience=2), validate=validate)
        assert rep.best_epoch == 2 and rep.epochs == 4
        assert all(np.array_equal(model.params[k], snapshots[1][k]) for k in model.params)

    def test_counting_model(self, small):
        ts = build_training_set(small.split, PREFIX, SINGLE)
        model, rep = train_model("pop", ts, small.split, TrainConfig())
        assert rep.epochs == 0 and rep.best_epoch == 0 and model.kind == "pop"

    def test_unknown_kind(self, small):
        with pytest.raises(ValueError):
            train_model("lstm", build_training_set(small.split, ORIGINAL, SINGLE), small.split, TrainConfig())

    def test_gru_learns_deterministic_transition(self):
        split = transition_split()
        ts = build_training_set(split, PREFIX, SINGLE, 20)
        model, _ = train_model("gru", ts, split, self.cfg(lr=0.01, max_epochs=40, patience=40))
        contexts = [s.items + (split.valid_target[s.user],) for s in split.train]
        assert all(c[-1] == 1 for c in contexts)
        ranks = ranks_of_targets(model.score(contexts), np.full(len(contexts), 2))
        assert (ranks == 1).all()

    @pytest.mark.parametrize("kind", ["attn", "gru"])
    @pytest.mark.parametrize("loss", [CE, BCE])
    def test_loss_decreases(self, small, kind, loss):
        ts = build_training_set(small.split, PREFIX, SINGLE, 20)
        ts.sequences, ts.users = ts.sequences[:50], ts.users[:50]
        model, rep = train_model(kind, ts, small.split, self.cfg(loss=loss, max_epochs=5, patience=5, lr=0.01),
                                 validate=lambda m: 0.0)
        losses = [h["loss"] for h in rep.history]
        assert len(losses) == 5 and all(a > b for a, b in zip(losses, losses[1:]))

    @pytest.mark.parametrize("kind", ["attn", "gru"])
    def test_replay_and_checkpoint(self, small, kind, tmp_path):
        ts = build_training_set(small.split, PREFIX, MULTI, 20)
        cfg = self.cfg(max_epochs=4, loss="bce")
        runs = [train_model(kind, ts, small.split, cfg, checkpoint=tmp_path / f"{i}.npz") for i in range(2)]
        (m1, r1), (m2, r2) = runs
        assert all(np.array_equal(m1.params[k], m2.params[k]) for k in m1.params)
        assert r1.history == r2.history and r1.best_metric == r2.best_metric
        assert (tmp_path / "0.npz").read_bytes() == (tmp_path / "1.npz").read_bytes()
        back = load_checkpoint(tmp_path / "0.npz")
        assert evaluate(back, small.split, "valid", 20)["N@10"] == r1.best_metric
        assert r1.best_epoch <= r1.epochs

    def test_divergence(self, small):
        ts = build_training_set(small.split, PREFIX, SINGLE, 20)
        with pytest.raises(TrainingDiverged, match="diverged"):
            train_model("attn", ts, small.split, self.cfg(lr=10.0, max_epochs=5))

    def test_uniform_guess_loss(self):
        assert uniform_guess_loss(CE, 100) == pytest.approx(np.log(100))
        assert uniform_guess_loss(BCE, 100) == pytest.approx(2 * np.log(2))

    def test_empty_training_set(self, small):
        ts = build_training_set(small.split, ORIGINAL, SINGLE)
        ts.sequences, ts.users = [], []
        with pytest.raises(ValueError):
            train_model("gru", ts, small.split, TrainConfig())

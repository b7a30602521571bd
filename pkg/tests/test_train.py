"""Optimizer arithmetic, early stopping, and the training protocol.

The end-to-end cases run a deliberately tiny model on the synthetic
tone corpus so full multi-epoch runs stay in the hundreds of
milliseconds. Bitwise checkpoint comparisons are meaningful because
every piece of mutable state (parameters, batch-norm running stats,
momentum buffers, generator state) rides along in the archive.
"""

import csv

import numpy as np
import pytest

from ctcasr.alphabet import build_alphabet
from ctcasr.data import split
from ctcasr.errors import ConfigError
from ctcasr.model import ModelConfig
from ctcasr.numerics import Tensor
from ctcasr.train import (
    TrainConfig,
    clip_gradients,
    early_stop,
    load_checkpoint,
    lr_at,
    sgd_step,
    train,
    write_history_csv,
    EpochStats,
)

from toydata import make_corpus

TINY = ModelConfig("tiny", "BlockA", 1, 8, custom=True)


class TestLearningRate:
    def test_first_epoch_is_initial_rate(self):
        assert lr_at(TrainConfig(), 0) == 3e-4

    def test_gamma_one_is_constant(self):
        cfg = TrainConfig(gamma=1.0)
        assert [lr_at(cfg, e) for e in (0, 5, 29)] == [3e-4] * 3

    def test_decay_closed_form(self):
        cfg = TrainConfig(gamma=1 / 1.1)
        assert lr_at(cfg, 2) == pytest.approx(3e-4 / 1.21, rel=1e-12)


class TestSgdStep:
    def test_plain_step(self):
        p = Tensor("p", np.array([1.0]))
        p.accumulate_grad(np.array([2.0]))
        sgd_step([p], {}, lr=0.1, momentum=0.0)
        assert p.data[0] == pytest.approx(0.8, abs=1e-12)

    def test_zero_gradient_is_identity(self):
        p = Tensor("p", np.array([3.0, -4.0]))
        sgd_step([p], {}, lr=0.5, momentum=0.0)
        np.testing.assert_array_equal(p.data, [3.0, -4.0])

    def test_momentum_accumulates(self):
        p = Tensor("p", np.array([0.0]))
        velocities = {}
        for expected in (-1.0, -2.9):
            p.zero_grad()
            p.accumulate_grad(np.array([1.0]))
            sgd_step([p], velocities, lr=1.0, momentum=0.9)
            assert p.data[0] == pytest.approx(expected, abs=1e-6)


class TestClipGradients:
    def test_scales_to_max_norm(self, f64):
        a = Tensor("a", np.zeros(1))
        b = Tensor("b", np.zeros(1))
        a.accumulate_grad(np.array([3.0]))
        b.accumulate_grad(np.array([4.0]))
        norm = clip_gradients([a, b], max_norm=1.0)
        assert norm == pytest.approx(5.0)
        np.testing.assert_allclose(a.grad, [0.6], atol=1e-12)
        np.testing.assert_allclose(b.grad, [0.8], atol=1e-12)
        assert clip_gradients([a, b], max_norm=1.0) <= 1.0 + 1e-9

    def test_never_increases_norm_at_working_precision(self):
        # storage is float32 by default, so allow a few ulps of slack
        p = Tensor("p", np.zeros(3))
        p.accumulate_grad(np.array([3.0, 4.0, 12.0]))
        assert clip_gradients([p], max_norm=2.0) == pytest.approx(13.0)
        slack = 8 * np.finfo(p.data.dtype).eps
        assert clip_gradients([p], max_norm=2.0) <= 2.0 * (1 + slack)

    def test_small_norms_untouched(self):
        p = Tensor("p", np.zeros(2))
        p.accumulate_grad(np.array([0.3, 0.4]))
        norm = clip_gradients([p], max_norm=400.0)
        assert norm == pytest.approx(0.5)
        np.testing.assert_allclose(p.grad, [0.3, 0.4], atol=1e-7)


class TestEarlyStop:
    @pytest.mark.parametrize(
        "history, expected",
        [
            ([37.0, 36.0, 35.0], False),
            ([35.0, 36.0, 35.5, 35.9], True),
            ([35.0, 36.0, 34.0, 36.0, 36.0], False),
            ([], False),
        ],
    )
    def test_patience_three(self, history, expected):
        assert early_stop(history, patience=3) is expected

    def test_patience_one_stops_on_first_plateau(self):
        assert early_stop([35.0, 35.0], patience=1) is True
        assert early_stop([35.0, 34.0], patience=1) is False

    def test_ties_do_not_reset(self):
        # equalling the best is not strict improvement
        assert early_stop([35.0, 35.0, 35.0, 35.0], patience=3) is True


class TestConfigValidation:
    def test_rejects_bad_values(self):
        with pytest.raises(ConfigError):
            TrainConfig(lr=0.0)
        with pytest.raises(ConfigError):
            TrainConfig(gamma=0.0)
        with pytest.raises(ConfigError):
            TrainConfig(gamma=1.5)
        with pytest.raises(ConfigError):
            TrainConfig(momentum=1.0)
        with pytest.raises(ConfigError):
            TrainConfig(patience=0)
        with pytest.raises(ConfigError):
            TrainConfig(max_epochs=0)


class TestHistoryCsv:
    def test_header_and_rows(self, tmp_path):
        history = [
            EpochStats(epoch=0, lr=3e-4, train_loss=12.5, val_wer=90.0),
            EpochStats(epoch=1, lr=2.7e-4, train_loss=8.25, val_wer=75.5),
        ]
        path = tmp_path / "history.csv"
        write_history_csv(history, path)
        with open(path, newline="") as f:
            rows = list(csv.reader(f))
        assert rows[0] == ["epoch", "lr", "train_loss", "val_wer"]
        assert rows[1][0] == "0" and float(rows[1][1]) == pytest.approx(3e-4)
        assert float(rows[2][3]) == pytest.approx(75.5)


@pytest.fixture(scope="module")
def tone_sets(tmp_path_factory):
    root = tmp_path_factory.mktemp("tones")
    manifest = make_corpus(root, ["cab", "ace bed", "fad", "deed", "cafe ace"])
    alphabet = build_alphabet(manifest.transcripts())
    train_m, val_m, _ = split(manifest, ratios=(0.6, 0.2, 0.2), seed=0)
    return train_m, val_m, alphabet


def run(tmp_path, name, tcfg, resume=None, train_m=None, val_m=None, alphabet=None):
    out = tmp_path / name
    best, history = train(TINY, train_m, val_m, alphabet, out, tcfg=tcfg, resume=resume)
    return out, best, history


class TestTrainLoop:
    def test_single_epoch_artifacts(self, tmp_path, tone_sets):
        train_m, val_m, alphabet = tone_sets
        tcfg = TrainConfig(batch_size=3, max_epochs=1, seed=0)
        out, best, history = run(tmp_path, "one", tcfg, train_m=train_m, val_m=val_m, alphabet=alphabet)
        assert len(history) == 1
        assert (out / "epoch_000.ckpt").exists()
        assert best.read_bytes() == (out / "epoch_000.ckpt").read_bytes()
        assert (out / "history.csv").exists()
        assert (out / "history.png").exists()
        assert not (out / "epoch_001.ckpt").exists()

    def test_checkpoint_reloads_cleanly(self, tmp_path, tone_sets):
        train_m, val_m, alphabet = tone_sets
        tcfg = TrainConfig(batch_size=3, max_epochs=1, seed=0)
        _, best, history = run(tmp_path, "reload", tcfg, train_m=train_m, val_m=val_m, alphabet=alphabet)
        net, ck_alphabet, ck_model, ck_tcfg, state = load_checkpoint(best)
        assert ck_alphabet == alphabet
        assert ck_model == TINY
        assert ck_tcfg == tcfg
        assert state["epoch"] == 0
        assert [h.val_wer for h in state["history"]] == [h.val_wer for h in history]

    def test_fixed_seed_runs_are_bitwise_identical(self, tmp_path, tone_sets):
        train_m, val_m, alphabet = tone_sets
        tcfg = TrainConfig(batch_size=3, max_epochs=2, patience=10, seed=7)
        _, best_a, _ = run(tmp_path, "det_a", tcfg, train_m=train_m, val_m=val_m, alphabet=alphabet)
        _, best_b, _ = run(tmp_path, "det_b", tcfg, train_m=train_m, val_m=val_m, alphabet=alphabet)
        assert best_a.read_bytes() == best_b.read_bytes()

    def test_resume_replays_the_uninterrupted_run(self, tmp_path, tone_sets):
        """Restarting from a mid-run checkpoint must land on the same bytes."""
        train_m, val_m, alphabet = tone_sets
        tcfg = TrainConfig(batch_size=3, max_epochs=4, patience=10, seed=1)
        straight, _, history = run(
            tmp_path, "straight", tcfg, train_m=train_m, val_m=val_m, alphabet=alphabet
        )
        assert len(history) == 4
        resumed, _, resumed_history = run(
            tmp_path,
            "resumed",
            None,
            resume=straight / "epoch_001.ckpt",
            train_m=train_m,
            val_m=val_m,
            alphabet=alphabet,
        )
        assert [h.epoch for h in resumed_history] == [0, 1, 2, 3]
        assert (resumed / "epoch_003.ckpt").read_bytes() == (
            straight / "epoch_003.ckpt"
        ).read_bytes()

    def test_target_wer_exits_early(self, tmp_path, tone_sets):
        train_m, val_m, alphabet = tone_sets
        tcfg = TrainConfig(batch_size=3, max_epochs=5, seed=0, target_val_wer=1000.0)
        _, _, history = run(tmp_path, "target", tcfg, train_m=train_m, val_m=val_m, alphabet=alphabet)
        assert len(history) == 1

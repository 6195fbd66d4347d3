from __future__ import annotations

import numpy as np
import pytest

from tddn.layers import Param
from tddn.model import ModelConfig
from tddn.preprocess import LabelPolicy, fit_scaler, make_windows, pad_series, select_columns
from tddn.training import (
    Adam,
    TrainConfig,
    TrainingError,
    WindowBank,
    build_window_bank,
    lr_at,
    predict_windows,
    split_engines,
    train,
)
from _synth import make_bundle

SMALL_MODEL = ModelConfig(window=8, n_features=15, conv_channels=(4, 8))


def small_train_config(**overrides) -> TrainConfig:
    base = dict(batch_size=16, max_epochs=3, seed=0)
    base.update(overrides)
    return TrainConfig(**base)


class TestTrainConfig:
    def test_defaults_follow_protocol(self):
        config = TrainConfig()
        assert config.batch_size == 32
        assert config.max_epochs == 200
        assert config.lr_initial == 1e-4
        assert config.lr_reduced == 1e-5
        assert (config.beta1, config.beta2, config.eps) == (0.9, 0.999, 1e-8)
        assert config.patience == 10
        assert config.val_fraction == 0.2
        assert config.r_max == 120

    def test_invariants(self):
        with pytest.raises(ValueError, match="val_fraction"):
            TrainConfig(val_fraction=0.0)
        with pytest.raises(ValueError, match="val_fraction"):
            TrainConfig(val_fraction=1.0)
        with pytest.raises(ValueError, match="patience"):
            TrainConfig(patience=0)
        with pytest.raises(ValueError, match="batch_size"):
            TrainConfig(batch_size=0)
        with pytest.raises(ValueError, match="learning rates"):
            TrainConfig(lr_initial=0.0)

    def test_label_policy_carries_cap(self):
        assert TrainConfig(r_max=90).label_policy == LabelPolicy(r_max=90)


class TestLrSchedule:
    def test_boundary_values(self):
        config = TrainConfig()
        assert lr_at(1, config) == 1e-4
        assert lr_at(100, config) == 1e-4
        assert lr_at(101, config) == 1e-5
        assert lr_at(200, config) == 1e-5

    def test_rejects_epoch_zero(self):
        with pytest.raises(ValueError, match="epoch"):
            lr_at(0, TrainConfig())


class TestSplitEngines:
    def test_fd001_like_count(self):
        train_ids, val_ids = split_engines(range(1, 101), 0.2, seed=0)
        assert len(train_ids) == 80
        assert len(val_ids) == 20

    def test_rounding_half_up(self):
        train_ids, val_ids = split_engines(range(1, 260), 0.2, seed=0)
        assert len(val_ids) == 52
        assert len(train_ids) == 207

    def test_disjoint_cover(self):
        ids = list(range(1, 48))
        train_ids, val_ids = split_engines(ids, 0.3, seed=5)
        assert sorted(train_ids + val_ids) == ids
        assert not set(train_ids) & set(val_ids)

    def test_deterministic_per_seed(self):
        a = split_engines(range(1, 101), 0.2, seed=7)
        b = split_engines(range(1, 101), 0.2, seed=7)
        c = split_engines(range(1, 101), 0.2, seed=8)
        assert a == b
        assert a != c

    def test_rejects_degenerate_input(self):
        with pytest.raises(ValueError, match="at least 2"):
            split_engines([1], 0.5, seed=0)
        with pytest.raises(ValueError, match="empty side"):
            split_engines(range(1, 4), 0.01, seed=0)
        with pytest.raises(ValueError, match="empty side"):
            split_engines(range(1, 4), 0.99, seed=0)
        with pytest.raises(ValueError, match="duplicate"):
            split_engines([1, 1, 2], 0.5, seed=0)


class TestAdam:
    def test_zero_gradient_keeps_params(self):
        p = Param("p", np.array([1.0, -2.0]))
        opt = Adam([p])
        opt.step(lr=0.1)
        np.testing.assert_array_equal(p.value, [1.0, -2.0])
        assert opt.step_count == 1

    def test_first_step_is_signed_lr(self):
        # bias-corrected first step: -lr * g / (|g| + eps') ≈ -lr * sign(g)
        for g in (0.7, -3.0, 1e-3):
            p = Param("p", np.array([0.5]))
            p.grad[:] = g
            opt = Adam([p])
            opt.step(lr=0.01)
            update = p.value[0] - 0.5
            assert update == pytest.approx(-0.01 * np.sign(g), rel=1e-5)

    def test_identical_states_step_identically(self):
        rng = np.random.default_rng(42)
        value = rng.normal(size=(3, 2))
        grad = rng.normal(size=(3, 2))
        results = []
        for _ in range(2):
            p = Param("p", value.copy())
            p.grad[...] = grad
            opt = Adam([p])
            opt.step(lr=0.05)
            opt.step(lr=0.05)
            results.append(p.value.copy())
        np.testing.assert_array_equal(results[0], results[1])

    def test_shape_mismatch_rejected(self):
        p = Param("p", np.zeros(3))
        opt = Adam([p])
        p.grad = np.zeros(4)
        with pytest.raises(ValueError, match="shape"):
            opt.step(lr=0.1)

    def test_descends_a_quadratic(self):
        p = Param("p", np.array([5.0]))
        opt = Adam([p])
        for _ in range(200):
            p.grad[:] = 2.0 * p.value
            opt.step(lr=0.1)
        assert abs(p.value[0]) < 0.5


class TestWindowBank:
    def test_gather_matches_make_windows(self):
        bundle = make_bundle(n_train=3, seed=21)
        selection = select_columns("FD001")
        scaler = fit_scaler(bundle.train, selection)
        policy = LabelPolicy()
        window = 6
        bank = build_window_bank(bundle.train, scaler, selection, policy, window)
        assert bank.n_windows == sum(t.n_cycles for t in bundle.train)

        from tddn.preprocess import apply_scaler, assign_rul_labels

        offset = 0
        for traj in bundle.train:
            scaled = apply_scaler(traj, scaler, selection)
            labels = assign_rul_labels(traj.n_cycles, policy)
            samples = make_windows(pad_series(scaled, window), window, labels, traj.unit_id)
            idx = np.arange(offset, offset + traj.n_cycles)
            x, y = bank.gather(idx)
            for k, sample in enumerate(samples):
                np.testing.assert_array_equal(x[k], sample.matrix)
                assert y[k] == sample.label
            offset += traj.n_cycles

    def test_terminal_ruls_shift_labels(self):
        bundle = make_bundle(n_train=1, n_test=2, seed=22)
        selection = select_columns("FD001")
        scaler = fit_scaler(bundle.train, selection)
        bank = build_window_bank(
            bundle.test, scaler, selection, LabelPolicy(), 4,
            terminal_ruls=[int(r) for r in bundle.test_rul],
        )
        # last window of each engine carries exactly its file RUL (below cap)
        ends = np.cumsum([t.n_cycles for t in bundle.test]) - 1
        np.testing.assert_array_equal(bank.labels[ends], bundle.test_rul.astype(float))

    def test_mismatched_lengths_rejected(self):
        with pytest.raises(ValueError, match="lengths differ"):
            WindowBank([np.zeros((5, 2))], [], [], window=3)
        with pytest.raises(ValueError, match="does not fit"):
            WindowBank([np.zeros((5, 2))], [np.zeros(5)], [1], window=3)
        bundle = make_bundle(n_train=2, seed=23)
        selection = select_columns("FD001")
        scaler = fit_scaler(bundle.train, selection)
        with pytest.raises(ValueError, match="terminal RULs"):
            build_window_bank(
                bundle.train, scaler, selection, LabelPolicy(), 4, terminal_ruls=[1]
            )


class TestTrain:
    def test_smoke_training_reduces_loss(self):
        bundle = make_bundle(n_train=3, n_test=1, min_len=30, max_len=45, seed=30)
        config = small_train_config(max_epochs=20, lr_initial=1e-3, lr_reduced=1e-4)
        result = train(bundle, SMALL_MODEL, config)
        assert result.report.train_loss[19] < result.report.train_loss[0]

    def test_engine_level_split_recorded(self):
        bundle = make_bundle(n_train=5, seed=31)
        result = train(bundle, SMALL_MODEL, small_train_config(max_epochs=1))
        all_ids = sorted(result.train_unit_ids + result.val_unit_ids)
        assert all_ids == [t.unit_id for t in bundle.train]
        assert len(result.val_unit_ids) == 1

    def test_deterministic_reports_and_params(self):
        bundle = make_bundle(n_train=4, seed=32)
        config = small_train_config(max_epochs=3, seed=9)
        a = train(bundle, SMALL_MODEL, config)
        b = train(bundle, SMALL_MODEL, config)
        assert a.report == b.report
        for pa, pb in zip(a.model.params(), b.model.params()):
            np.testing.assert_array_equal(pa.value, pb.value)

    def test_best_epoch_is_argmin_and_restored(self):
        bundle = make_bundle(n_train=4, seed=33)
        config = small_train_config(max_epochs=6, lr_initial=1e-3, lr_reduced=1e-4)
        result = train(bundle, SMALL_MODEL, config)
        report = result.report
        best = report.best_epoch
        assert report.val_rmse[best - 1] == min(report.val_rmse)
        # returned parameters reproduce the best epoch's validation RMSE
        by_id = {t.unit_id: t for t in bundle.train}
        val_bank = build_window_bank(
            [by_id[u] for u in result.val_unit_ids],
            result.scaler,
            result.selection,
            config.label_policy,
            SMALL_MODEL.window,
        )
        pred = predict_windows(result.model, val_bank)
        recomputed = float(np.sqrt(np.mean((pred - val_bank.labels) ** 2)))
        assert recomputed == pytest.approx(report.val_rmse[best - 1], abs=1e-12)

    def test_patience_stop(self):
        bundle = make_bundle(n_train=4, seed=34)
        config = small_train_config(max_epochs=40, patience=1, lr_initial=1e-3)
        result = train(bundle, SMALL_MODEL, config)
        report = result.report
        if report.stop_reason == "patience":
            assert report.n_epochs < 40
            assert report.val_rmse[-1] >= min(report.val_rmse)
        else:
            assert report.n_epochs == 40

    def test_max_epoch_stop(self):
        bundle = make_bundle(n_train=4, seed=35)
        result = train(bundle, SMALL_MODEL, small_train_config(max_epochs=2))
        assert result.report.stop_reason == "max_epochs"
        assert result.report.n_epochs == 2

    def test_selection_mismatch_rejected(self):
        bundle = make_bundle(n_train=3, seed=36)
        config = small_train_config(max_epochs=1)
        model = ModelConfig(window=8, n_features=24, conv_channels=(4, 8))
        with pytest.raises(ValueError, match="selection has 15"):
            train(bundle, model, config, select_columns("FD001"))

    def test_non_finite_loss_aborts_naming_batch(self):
        bundle = make_bundle(n_train=3, seed=37)
        config = small_train_config(max_epochs=1, lr_initial=1e160, lr_reduced=1e159)
        with np.errstate(all="ignore"):
            with pytest.raises(TrainingError, match=r"epoch 1, batch \d+"):
                train(bundle, SMALL_MODEL, config)

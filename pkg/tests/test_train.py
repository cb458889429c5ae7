"""Trainer tests: Adam against its fixed-gradient closed form, accuracy
evaluation edge cases, and the full loop on a separable toy graph."""
import numpy as np
import pytest

from efignn import autodiff as ad
from efignn import model as md
from efignn import train as tr
from efignn.graph import EdgeList, normalized_adjacency

# two 2-cliques with orthogonal features: linearly separable classes
TOY_ADJ = normalized_adjacency(EdgeList.from_pairs([(0, 1), (2, 3)], 4))
TOY_X = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]])
TOY_Y = np.array([0, 0, 1, 1])
TOY_MASKS = tr.SplitMasks(train=np.array([0, 2]), val=np.array([1]),
                          test=np.array([3]))


def toy_model(units=4, layers=1):
    return md.Model("efignn", 2, 2,
                    efi_cfg=md.EfiGnnConfig(num_layers=layers, units=units))


class TestAdamStep:
    def test_zero_gradient_zero_decay_is_identity(self):
        cfg = tr.TrainConfig(learning_rate=0.1)
        params = {"w": np.array([[1.0, -2.0]])}
        state = tr.init_adam_state(params)
        before = params["w"].copy()
        tr.adam_step(params, {"w": np.zeros((1, 2))}, state, 1, cfg)
        assert np.array_equal(params["w"], before)

    def test_constant_gradient_closed_form(self):
        # with g fixed, every step moves by exactly lr*g/(|g|+eps)
        cfg = tr.TrainConfig(learning_rate=0.01)
        g = np.array([[0.3, -1.7], [2.5, -0.001]])
        params = {"w": np.zeros((2, 2))}
        state = tr.init_adam_state(params)
        steps = 50
        for t in range(1, steps + 1):
            tr.adam_step(params, {"w": g}, state, t, cfg)
        expected = -steps * cfg.learning_rate * g / (np.abs(g) + cfg.eps)
        np.testing.assert_allclose(params["w"], expected, rtol=1e-9)

    def test_decay_only_shrinks_monotonically(self):
        cfg = tr.TrainConfig(learning_rate=1e-3, weight_decay=0.1)
        params = {"w": np.array([[1.0, -1.0]])}
        state = tr.init_adam_state(params)
        prev = np.abs(params["w"]).copy()
        for t in range(1, 51):
            tr.adam_step(params, {"w": np.zeros((1, 2))}, state, t, cfg)
            cur = np.abs(params["w"])
            assert np.all(cur < prev)
            prev = cur.copy()
        assert np.all(np.sign(params["w"]) == [[1.0, -1.0]])

    def test_batch_norm_params_exempt_from_decay(self):
        cfg = tr.TrainConfig(learning_rate=0.1, weight_decay=0.5)
        params = {"gcn.bn1.gamma": np.ones(3), "gcn.w1": np.ones((2, 3))}
        state = tr.init_adam_state(params)
        zero = {k: np.zeros_like(v) for k, v in params.items()}
        tr.adam_step(params, zero, state, 1, cfg)
        assert np.array_equal(params["gcn.bn1.gamma"], np.ones(3))
        assert np.all(params["gcn.w1"] < 1.0)

    def test_nonfinite_gradient_aborts_with_name(self):
        cfg = tr.TrainConfig(learning_rate=0.1)
        params = {"w": np.ones((1, 1))}
        state = tr.init_adam_state(params)
        with pytest.raises(ad.NumericError, match="'w'"):
            tr.adam_step(params, {"w": np.array([[np.nan]])}, state, 1, cfg)

    def test_step_index_validated(self):
        cfg = tr.TrainConfig(learning_rate=0.1)
        with pytest.raises(ValueError, match="starts at 1"):
            tr.adam_step({}, {}, tr.init_adam_state({}), 0, cfg)


class TestEvaluateAccuracy:
    def test_perfect_logits(self):
        logits = np.eye(3) * 5.0
        assert tr.evaluate_accuracy(logits, np.array([0, 1, 2]), np.arange(3)) == 1.0

    def test_uniform_logits_tie_break_to_lowest_class(self):
        logits = np.zeros((4, 3))
        labels = np.zeros(4, dtype=np.int64)
        assert tr.evaluate_accuracy(logits, labels, np.arange(4)) == 1.0
        assert tr.evaluate_accuracy(logits, np.ones(4, dtype=np.int64),
                                    np.arange(4)) == 0.0

    def test_random_logits_near_half(self):
        rng = np.random.default_rng(0)
        logits = rng.standard_normal((10_000, 2))
        labels = rng.integers(0, 2, 10_000)
        acc = tr.evaluate_accuracy(logits, labels, np.arange(10_000))
        assert abs(acc - 0.5) < 0.02

    def test_boolean_mask_and_empty_mask(self):
        logits = np.array([[1.0, 0.0], [0.0, 1.0]])
        labels = np.array([0, 0])
        mask = np.array([True, False])
        assert tr.evaluate_accuracy(logits, labels, mask) == 1.0
        with pytest.raises(ValueError, match="empty mask"):
            tr.evaluate_accuracy(logits, labels, np.array([], dtype=np.int64))


class TestSplitMasks:
    def test_overlap_rejected(self):
        masks = tr.SplitMasks(np.array([0, 1]), np.array([1]), np.array([2]))
        with pytest.raises(ValueError, match="train/val masks overlap"):
            masks.check(4)

    def test_out_of_range_rejected(self):
        masks = tr.SplitMasks(np.array([0]), np.array([1]), np.array([9]))
        with pytest.raises(ValueError, match="test mask indexes outside"):
            masks.check(4)

    def test_duplicates_rejected(self):
        masks = tr.SplitMasks(np.array([0, 0]), np.array([1]), np.array([2]))
        with pytest.raises(ValueError, match="duplicate"):
            masks.check(4)


class TestTrainLoop:
    def test_separable_toy_reaches_full_train_accuracy(self):
        cfg = tr.TrainConfig(learning_rate=0.05, epochs=200, seed=0)
        _, _, report = tr.train(toy_model(), TOY_ADJ, TOY_X, TOY_Y,
                                TOY_MASKS, cfg)
        assert max(train for _, train, _, _ in report.evals) == 1.0
        assert all(np.isfinite(loss) for loss in report.losses)

    def test_single_epoch_runs_one_step(self):
        cfg = tr.TrainConfig(learning_rate=0.05, epochs=1, seed=0)
        params, _, report = tr.train(toy_model(), TOY_ADJ, TOY_X, TOY_Y,
                                     TOY_MASKS, cfg)
        assert len(report.losses) == 1
        assert len(report.evals) == 1
        fresh = toy_model().init_params(np.random.default_rng(0))
        assert not np.array_equal(params["efi.w0"], fresh["efi.w0"])

    def test_zero_epochs_disallowed(self):
        with pytest.raises(ValueError, match="epochs"):
            tr.TrainConfig(learning_rate=0.1, epochs=0)

    def test_best_val_is_max_over_evaluated_epochs(self):
        cfg = tr.TrainConfig(learning_rate=0.05, epochs=50, seed=1, eval_every=5)
        _, _, report = tr.train(toy_model(), TOY_ADJ, TOY_X, TOY_Y,
                                TOY_MASKS, cfg)
        assert report.best_val_accuracy == max(v for _, _, v, _ in report.evals)
        assert report.best_val_accuracy >= report.final_val_accuracy

    def test_best_snapshot_reproduces_best_val_accuracy(self):
        cfg = tr.TrainConfig(learning_rate=0.05, epochs=60, seed=2)
        params, bn, report = tr.train(toy_model(), TOY_ADJ, TOY_X, TOY_Y,
                                      TOY_MASKS, cfg)
        out = toy_model().forward(ad.Tape(), TOY_ADJ, TOY_X, params, bn_state=bn)
        val = tr.evaluate_accuracy(out.logits.value, TOY_Y, TOY_MASKS.val)
        assert val == report.best_val_accuracy

    def test_seeded_runs_bitwise_identical(self):
        cfg = tr.TrainConfig(learning_rate=0.05, epochs=30, seed=3)
        p1, _, r1 = tr.train(toy_model(), TOY_ADJ, TOY_X, TOY_Y, TOY_MASKS, cfg)
        p2, _, r2 = tr.train(toy_model(), TOY_ADJ, TOY_X, TOY_Y, TOY_MASKS, cfg)
        assert r1.losses == r2.losses
        assert r1.evals == r2.evals
        for name in p1:
            assert np.array_equal(p1[name], p2[name])

    def test_divergence_aborts_with_epoch(self):
        cfg = tr.TrainConfig(learning_rate=1e200, epochs=5, seed=0)
        with np.errstate(over="ignore", invalid="ignore"):
            with pytest.raises(ad.NumericError, match=r"epoch \d+"):
                tr.train(toy_model(), TOY_ADJ, TOY_X, TOY_Y, TOY_MASKS, cfg)

    def test_joint_model_with_batch_norm_trains(self):
        model = md.Model(
            "joint", 2, 2,
            efi_cfg=md.EfiGnnConfig(num_layers=1, units=3, dropout=0.1),
            gcn_cfg=md.GcnConfig(num_layers=2, units=3, dropout=0.1,
                                 batch_norm=True))
        cfg = tr.TrainConfig(learning_rate=0.05, epochs=80, seed=4)
        params, bn, report = tr.train(model, TOY_ADJ, TOY_X, TOY_Y,
                                      TOY_MASKS, cfg)
        assert bn is not None and "gcn.bn1" in bn
        assert max(train for _, train, _, _ in report.evals) == 1.0
        out = model.forward(ad.Tape(), TOY_ADJ, TOY_X, params, bn_state=bn)
        assert np.isfinite(out.logits.value).all()

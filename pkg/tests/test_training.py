import math

import numpy as np
import pytest

from partmint.bank import DetectorBank, ForwardResult, forward, init_bank
from partmint.dataio import SyntheticSpec, synthesize
from partmint.errors import DimensionMismatchError
from partmint.ops import uniform_filter_3x3
from partmint.training import (
    LossBreakdown,
    RmspropState,
    TrainConfig,
    attention_coverage,
    locality_loss,
    loss_and_gradient,
    rmsprop_step,
    total_loss,
    train,
    unicity_loss,
)


def _point_mass_result(p, h, w, cell=(1, 1)):
    """ForwardResult whose activation maps are exact deltas."""
    acts = np.zeros((p, h, w))
    acts[:, cell[0], cell[1]] = 1.0
    smoothed = np.stack([uniform_filter_3x3(a) for a in acts])
    return ForwardResult(
        score_maps=np.zeros((p, h, w)),
        activation_maps=acts,
        smoothed_maps=smoothed,
        max_scores=np.zeros(p),
        max_locations=np.tile(np.array(cell), (p, 1)),
    )


def _uniform_result(p, h, w):
    acts = np.full((p, h, w), 1.0 / (h * w))
    smoothed = np.stack([uniform_filter_3x3(a) for a in acts])
    return ForwardResult(
        score_maps=np.zeros((p, h, w)),
        activation_maps=acts,
        smoothed_maps=smoothed,
        max_scores=np.zeros(p),
        max_locations=np.zeros((p, 2), dtype=int),
    )


def _random_batch(seed, n=4, p=3, h=4, w=5, d=6, scale=2.0):
    rng = np.random.default_rng(seed)
    bank = DetectorBank(rng.normal(size=(p, d)) * scale)
    feats = rng.normal(size=(n, h, w, d))
    return bank, feats, [forward(bank, feats[x]) for x in range(n)]


class TestLocalityLoss:
    def test_uniform_maps_14x14(self):
        results = [_uniform_result(p=2, h=14, w=14) for _ in range(3)]
        assert locality_loss(results) == pytest.approx(-9.0 / 196, abs=1e-12)

    def test_point_mass_reaches_lower_bound(self):
        results = [_point_mass_result(p=3, h=5, w=5) for _ in range(2)]
        assert locality_loss(results) == pytest.approx(-1.0, abs=1e-12)

    def test_matches_naive_recomputation(self):
        _, _, results = _random_batch(0)
        total = 0.0
        for r in results:
            for i in range(r.p):
                best = -math.inf
                for hh in range(r.smoothed_maps.shape[1]):
                    for ww in range(r.smoothed_maps.shape[2]):
                        best = max(best, r.smoothed_maps[i, hh, ww])
                total += best
        expected = -total / (r.p * len(results))
        assert locality_loss(results) == pytest.approx(expected, abs=1e-12)

    def test_bounds(self):
        for seed in range(5):
            _, _, results = _random_batch(seed)
            assert -1.0 - 1e-12 <= locality_loss(results) <= 0.0

    def test_empty_batch_rejected(self):
        with pytest.raises(ValueError):
            locality_loss([])


class TestUnicityLoss:
    def test_single_detector_is_zero(self):
        for seed in range(4):
            _, _, results = _random_batch(seed, p=1)
            assert unicity_loss(results) == 0.0

    def test_stacked_point_masses(self):
        results = [_point_mass_result(p=4, h=3, w=3)]
        assert unicity_loss(results) == pytest.approx(3.0, abs=1e-12)

    def test_matches_naive_recomputation(self):
        _, _, results = _random_batch(1, p=4)
        total = 0.0
        for r in results:
            summed = np.zeros(r.activation_maps.shape[1:])
            for i in range(r.p):
                summed += r.activation_maps[i]
            total += max(summed.max() - 1.0, 0.0)
        assert unicity_loss(results) == pytest.approx(total / len(results), abs=1e-12)

    def test_nonnegative(self):
        for seed in range(5):
            _, _, results = _random_batch(seed)
            assert unicity_loss(results) >= 0.0


class TestTotalLoss:
    def test_lambda_zero(self):
        _, _, results = _random_batch(2)
        bd = total_loss(results, 0.0)
        assert bd.total == bd.locality

    def test_arithmetic(self):
        bd = LossBreakdown.combine(-0.5, 0.3, 0.2)
        assert bd.total == pytest.approx(-0.44, abs=1e-15)

    def test_definition(self):
        _, _, results = _random_batch(3)
        bd = total_loss(results, 0.7)
        assert bd.total == pytest.approx(bd.locality + 0.7 * bd.unicity, abs=1e-15)


class TestGradient:
    def test_zero_features_give_zero_gradient(self):
        bank = DetectorBank(np.random.default_rng(0).normal(size=(2, 4)))
        _, grad = loss_and_gradient(bank, np.zeros((3, 3, 3, 4)), lam=0.5)
        assert np.all(grad == 0.0)

    def test_matches_central_differences(self):
        rng = np.random.default_rng(12)
        feats = rng.normal(size=(2, 3, 3, 4))
        kernels = rng.normal(size=(2, 4)) * 2.0
        lam = 1.0
        bank = DetectorBank(kernels.copy())
        _, grad = loss_and_gradient(bank, feats, lam)
        eps = 1e-5
        for i in range(2):
            for d in range(4):
                kp, km = kernels.copy(), kernels.copy()
                kp[i, d] += eps
                km[i, d] -= eps
                fp = total_loss([forward(DetectorBank(kp), f) for f in feats], lam).total
                fm = total_loss([forward(DetectorBank(km), f) for f in feats], lam).total
                fd = (fp - fm) / (2 * eps)
                if abs(grad[i, d]) < 1e-8:
                    assert abs(fd - grad[i, d]) < 1e-7
                else:
                    assert abs(fd - grad[i, d]) / abs(grad[i, d]) < 1e-4

    def test_lambda_zero_equals_locality_only(self):
        rng = np.random.default_rng(4)
        feats = rng.normal(size=(2, 3, 4, 5))
        bank = DetectorBank(rng.normal(size=(2, 5)) * 0.1)  # diffuse: hinge inactive
        bd0, g0 = loss_and_gradient(bank, feats, lam=0.0)
        bd1, g1 = loss_and_gradient(bank, feats, lam=1.0)
        assert bd1.unicity == 0.0
        assert np.array_equal(g0, g1)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            loss_and_gradient(DetectorBank(np.zeros((2, 4))), np.zeros((1, 3, 3, 5)), 0.2)


class TestRmsprop:
    def test_zero_gradient_keeps_weights(self):
        bank = init_bank(2, 4, 0)
        before = bank.kernels.copy()
        cfg = TrainConfig(weight_decay=0.0)
        rmsprop_step(bank, np.zeros((2, 4)), RmspropState.zeros_like(bank), cfg)
        assert np.array_equal(bank.kernels, before)

    def test_hand_evaluated_first_step(self):
        bank = DetectorBank(np.zeros((2, 3)))
        cfg = TrainConfig(learning_rate=5e-4, weight_decay=0.0)
        rmsprop_step(bank, np.ones((2, 3)), RmspropState.zeros_like(bank), cfg)
        expected = -5e-4 / (math.sqrt(0.01) + 1e-8)
        assert np.allclose(bank.kernels, expected, rtol=1e-12)
        assert expected == pytest.approx(-5e-3, rel=1e-6)

    def test_two_steps_match_scripted_recurrence(self):
        rng = np.random.default_rng(8)
        w0 = rng.normal(size=(2, 3))
        g1, g2 = rng.normal(size=(2, 3)), rng.normal(size=(2, 3))
        cfg = TrainConfig(learning_rate=1e-3, weight_decay=1e-5)

        # scripted reference recurrence
        w, v = w0.copy(), np.zeros_like(w0)
        for g in (g1, g2):
            v = cfg.rmsprop_smoothing * v + (1 - cfg.rmsprop_smoothing) * g * g
            w = w - cfg.learning_rate * (g + cfg.weight_decay * w) / (np.sqrt(v) + cfg.rmsprop_epsilon)

        bank = DetectorBank(w0.copy())
        state = RmspropState.zeros_like(bank)
        rmsprop_step(bank, g1, state, cfg)
        rmsprop_step(bank, g2, state, cfg)
        assert np.allclose(bank.kernels, w, rtol=0, atol=1e-15)

    def test_shape_mismatch(self):
        bank = init_bank(2, 4, 0)
        with pytest.raises(DimensionMismatchError):
            rmsprop_step(bank, np.zeros((3, 4)), RmspropState.zeros_like(bank), TrainConfig())


class TestTrain:
    def test_zero_epochs_identity(self):
        rng = np.random.default_rng(0)
        bank = init_bank(2, 6, 1)
        before = bank.kernels.copy()
        bank, report = train(bank, rng.normal(size=(5, 3, 3, 6)), TrainConfig(epochs=0))
        assert np.array_equal(bank.kernels, before)
        assert report.epochs == []
        assert math.isfinite(report.final_coverage)

    def test_deterministic_trajectories(self):
        data = synthesize(SyntheticSpec(height=5, width=5, depth=8, p_true=2, n_train=24, n_test=0, seed=3))
        cfg = TrainConfig(epochs=3, seed=11)
        b1, r1 = train(init_bank(2, 8, 5), data.train, cfg)
        b2, r2 = train(init_bank(2, 8, 5), data.train, cfg)
        assert np.array_equal(b1.kernels, b2.kernels)
        assert [e.total for e in r1.epochs] == [e.total for e in r2.epochs]

    def test_loss_trend_on_planted_patterns(self):
        data = synthesize(SyntheticSpec(height=5, width=5, depth=8, p_true=2, n_train=60, n_test=0, seed=2))
        bank = init_bank(2, 8, 4)
        bank, report = train(bank, data.train, TrainConfig(epochs=10, seed=0))
        totals = [e.total for e in report.epochs]
        assert np.mean(totals[-5:]) < np.mean(totals[:5])

    def test_epoch_log_lines(self):
        import io
        import json

        data = synthesize(SyntheticSpec(height=4, width=4, depth=6, p_true=2, n_train=10, n_test=0, seed=1))
        stream = io.StringIO()
        train(init_bank(2, 6, 0), data.train, TrainConfig(epochs=4), log_stream=stream)
        lines = [json.loads(line) for line in stream.getvalue().splitlines()]
        assert len(lines) == 4
        assert lines[0]["epoch"] == 0 and "total" in lines[0]

    def test_empty_dataset_rejected(self):
        with pytest.raises(ValueError):
            train(init_bank(2, 4, 0), np.zeros((0, 3, 3, 4)), TrainConfig(epochs=1))


class TestAttentionCoverage:
    def test_single_detector_is_one(self):
        rng = np.random.default_rng(0)
        bank = DetectorBank(rng.normal(size=(1, 5)))
        assert attention_coverage(bank, rng.normal(size=(6, 4, 4, 5))) == pytest.approx(1.0, abs=1e-12)

    def test_identical_detectors(self):
        rng = np.random.default_rng(1)
        k = rng.normal(size=5)
        bank = DetectorBank(np.stack([k] * 3))
        assert attention_coverage(bank, rng.normal(size=(5, 4, 4, 5))) == pytest.approx(1 / 3, abs=1e-6)

    def test_bounds(self):
        rng = np.random.default_rng(2)
        for p in (1, 2, 5):
            bank = DetectorBank(rng.normal(size=(p, 6)) * 2)
            e = attention_coverage(bank, rng.normal(size=(4, 5, 5, 6)))
            assert 1.0 / p - 1e-9 <= e <= 1.0 + 1e-9

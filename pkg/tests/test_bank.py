import numpy as np
import pytest

from partmint.bank import DetectorBank, forward, init_bank, summed_activation
from partmint.errors import DimensionMismatchError


def _brute_forward(feats, kernels):
    """Composition of triple-loop oracles for one image."""
    h, w, d = feats.shape
    p = kernels.shape[0]
    scores = np.zeros((p, h, w))
    for i in range(p):
        for hh in range(h):
            for ww in range(w):
                scores[i, hh, ww] = sum(feats[hh, ww, k] * kernels[i, k] for k in range(d))
    acts = np.zeros_like(scores)
    for i in range(p):
        e = np.exp(scores[i] - scores[i].max())
        acts[i] = e / e.sum()
    smoothed = np.zeros_like(acts)
    for i in range(p):
        for hh in range(h):
            for ww in range(w):
                for h2 in range(max(hh - 1, 0), min(hh + 2, h)):
                    for w2 in range(max(ww - 1, 0), min(ww + 2, w)):
                        smoothed[i, hh, ww] += acts[i, h2, w2]
    return scores, acts, smoothed


class TestForward:
    def test_zero_kernel_gives_uniform_map(self):
        rng = np.random.default_rng(0)
        fmap = rng.normal(size=(3, 5, 4))
        fr = forward(DetectorBank(np.zeros((1, 4))), fmap)
        assert np.allclose(fr.activation_maps[0], 1.0 / 15, atol=1e-15)
        assert fr.max_scores[0] == 0.0

    def test_duplicate_kernels_share_maps(self):
        rng = np.random.default_rng(1)
        fmap = rng.normal(size=(4, 4, 6))
        k = rng.normal(size=6)
        fr = forward(DetectorBank(np.stack([k, k])), fmap)
        assert np.array_equal(fr.activation_maps[0], fr.activation_maps[1])
        assert np.array_equal(fr.max_locations[0], fr.max_locations[1])

    def test_matches_composed_oracles(self):
        rng = np.random.default_rng(2)
        fmap = rng.normal(size=(4, 4, 8))
        bank = DetectorBank(rng.normal(size=(3, 8)))
        fr = forward(bank, fmap)
        scores, acts, smoothed = _brute_forward(fmap, bank.kernels)
        assert np.allclose(fr.score_maps, scores, atol=1e-12)
        assert np.allclose(fr.activation_maps, acts, atol=1e-12)
        assert np.allclose(fr.smoothed_maps, smoothed, atol=1e-12)
        for i in range(3):
            flat = scores[i].argmax()
            assert tuple(fr.max_locations[i]) == divmod(flat, 4)
            assert fr.max_scores[i] == pytest.approx(scores[i].max(), abs=1e-12)

    def test_activation_maps_are_distributions(self):
        rng = np.random.default_rng(3)
        fr = forward(DetectorBank(rng.normal(size=(4, 5)) * 3), rng.normal(size=(5, 6, 5)))
        assert np.all(fr.activation_maps >= 0)
        assert np.allclose(fr.activation_maps.sum(axis=(1, 2)), 1.0, atol=1e-5)

    def test_scale_covariance(self):
        rng = np.random.default_rng(4)
        fmap = rng.normal(size=(4, 5, 6))
        k = rng.normal(size=(2, 6))
        fr1 = forward(DetectorBank(k.copy()), fmap)
        fr2 = forward(DetectorBank(k * 2.5), fmap)
        assert np.allclose(fr2.score_maps, 2.5 * fr1.score_maps, atol=1e-12)
        assert np.array_equal(fr1.max_locations, fr2.max_locations)

    def test_depth_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            forward(DetectorBank(np.zeros((2, 5))), np.zeros((3, 3, 4)))


class TestSummedActivation:
    def test_single_detector_identity(self):
        rng = np.random.default_rng(5)
        fr = forward(DetectorBank(rng.normal(size=(1, 4))), rng.normal(size=(3, 3, 4)))
        assert np.array_equal(summed_activation(fr), fr.activation_maps[0])

    def test_uniform_maps_sum_to_one_per_cell(self):
        fr = forward(DetectorBank(np.zeros((4, 3))), np.random.default_rng(6).normal(size=(2, 2, 3)))
        assert np.allclose(summed_activation(fr), 1.0, atol=1e-12)

    def test_matches_cellwise_add(self):
        rng = np.random.default_rng(7)
        fr = forward(DetectorBank(rng.normal(size=(3, 5))), rng.normal(size=(4, 3, 5)))
        expected = fr.activation_maps[0] + fr.activation_maps[1] + fr.activation_maps[2]
        s = summed_activation(fr)
        assert np.allclose(s, expected, atol=1e-12)
        assert s.max() <= fr.p + 1e-9


class TestInitBank:
    def test_deterministic(self):
        a = init_bank(3, 16, seed=42)
        b = init_bank(3, 16, seed=42)
        assert np.array_equal(a.kernels, b.kernels)

    def test_weight_scale(self):
        bank = init_bank(4, 512, seed=9)
        std = bank.kernels.std()
        target = 1.0 / np.sqrt(512)
        assert abs(std - target) / target < 0.2

    def test_different_seeds_differ(self):
        assert not np.array_equal(init_bank(2, 8, 0).kernels, init_bank(2, 8, 1).kernels)

    def test_rejects_bad_sizes(self):
        with pytest.raises(ValueError):
            init_bank(0, 4, 0)

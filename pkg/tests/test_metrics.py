"""Tests for facefill.metrics."""

import math

import numpy as np
import pytest
import torch

from facefill.errors import ContractError, ShapeError
from facefill.metrics import (
    GaussianAccumulator,
    GaussianStats,
    cosine_similarity,
    frechet_distance,
    psnr,
    roc_auc,
    roc_from_scores,
    ssim,
    tpr_at,
    verification_pairs,
)


def noise(shape: tuple[int, ...], seed: int) -> np.ndarray:
    return np.random.default_rng(seed).random(shape)


class TestPSNR:
    def test_identical_is_infinite(self) -> None:
        a = noise((3, 8, 8), 0)
        assert psnr(a, a) == math.inf

    def test_constant_offset(self) -> None:
        a = np.full((3, 8, 8), 0.2)
        assert psnr(a, a + 0.1) == pytest.approx(20.0)

    def test_worst_case(self) -> None:
        assert psnr(np.zeros((4, 4)), np.ones((4, 4))) == pytest.approx(0.0)

    def test_symmetric_and_accepts_tensors(self) -> None:
        a, b = torch.rand(3, 8, 8), torch.rand(3, 8, 8)
        assert psnr(a, b) == psnr(b, a)

    def test_shape_mismatch(self) -> None:
        with pytest.raises(ShapeError):
            psnr(np.zeros((3, 4, 4)), np.zeros((3, 4, 5)))


class TestSSIM:
    def test_identical_is_one(self) -> None:
        a = noise((3, 32, 32), 1)
        assert ssim(a, a) == pytest.approx(1.0)

    def test_constant_images_closed_form(self) -> None:
        c1 = 0.01**2
        value = ssim(np.zeros((32, 32)), np.ones((32, 32)))
        assert value == pytest.approx(c1 / (1 + c1), rel=1e-6)

    def test_independent_noise_near_zero(self) -> None:
        assert abs(ssim(noise((64, 64), 2), noise((64, 64), 3))) < 0.1

    def test_symmetric(self) -> None:
        a, b = noise((3, 32, 32), 4), noise((3, 32, 32), 5)
        assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-9)

    def test_rejects_batches(self) -> None:
        with pytest.raises(ShapeError):
            ssim(np.zeros((1, 3, 16, 16)), np.zeros((1, 3, 16, 16)))


class TestFrechet:
    def test_self_distance_is_zero(self) -> None:
        stats = GaussianStats.from_samples(noise((50, 4), 6))
        assert frechet_distance(stats, stats) <= 1e-6

    def test_mean_shift(self) -> None:
        s1 = GaussianStats(mean=np.zeros(2), cov=np.eye(2), n=10)
        s2 = GaussianStats(mean=np.array([1.0, 0.0]), cov=np.eye(2), n=10)
        assert frechet_distance(s1, s2) == pytest.approx(1.0)

    def test_scalar_covariances(self) -> None:
        s1 = GaussianStats(mean=np.zeros(1), cov=np.array([[4.0]]), n=10)
        s2 = GaussianStats(mean=np.zeros(1), cov=np.array([[1.0]]), n=10)
        assert frechet_distance(s1, s2) == pytest.approx(1.0)

    def test_singular_covariances_stay_non_negative(self) -> None:
        rank_one = np.outer([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
        s1 = GaussianStats(mean=np.zeros(3), cov=rank_one, n=2)
        s2 = GaussianStats(mean=np.zeros(3), cov=rank_one * (1 + 1e-12), n=2)
        assert frechet_distance(s1, s2) >= 0.0

    def test_rejects_asymmetric_covariance(self) -> None:
        with pytest.raises(ContractError, match="symmetric"):
            GaussianStats(mean=np.zeros(2), cov=np.array([[1.0, 0.5], [0.0, 1.0]]), n=3)

    def test_dimension_mismatch(self) -> None:
        s1 = GaussianStats(mean=np.zeros(1), cov=np.eye(1), n=2)
        s2 = GaussianStats(mean=np.zeros(2), cov=np.eye(2), n=2)
        with pytest.raises(ShapeError):
            frechet_distance(s1, s2)


class TestGaussianAccumulator:
    def test_matches_numpy(self) -> None:
        samples = noise((40, 3), 7)
        stats = GaussianStats.from_samples(samples)
        np.testing.assert_allclose(stats.mean, samples.mean(axis=0))
        np.testing.assert_allclose(stats.cov, np.cov(samples, rowvar=False), atol=1e-12)
        assert stats.n == 40

    def test_merge_matches_single_pass(self) -> None:
        samples = noise((30, 3), 8)
        left, right = GaussianAccumulator(3), GaussianAccumulator(3)
        left.update(samples[:11])
        right.update(torch.from_numpy(samples[11:]))
        merged = left.merge(right).finalize()
        reversed_merge = right.merge(left).finalize()
        whole = GaussianStats.from_samples(samples)
        np.testing.assert_allclose(merged.cov, whole.cov, atol=1e-12)
        np.testing.assert_allclose(merged.mean, reversed_merge.mean, atol=1e-15)

    def test_empty_finalize(self) -> None:
        with pytest.raises(ContractError):
            GaussianAccumulator(2).finalize()

    def test_wrong_width(self) -> None:
        with pytest.raises(ShapeError):
            GaussianAccumulator(2).update(np.zeros((4, 3)))


class TestROC:
    def test_perfect_separation(self) -> None:
        result = roc_from_scores([0.9, 0.8, 0.2, 0.1], [True, True, False, False])
        assert result.auc == 1.0
        assert result.tpr_at_fpr[0.01] == 1.0

    def test_all_tied_is_half(self) -> None:
        result = roc_from_scores([0.5] * 6, [True, False] * 3)
        assert result.auc == pytest.approx(0.5)

    def test_hand_enumerated_pairs(self) -> None:
        result = roc_from_scores([0.9, 0.4, 0.6, 0.1], [True, True, False, False])
        assert result.auc == pytest.approx(0.75)

    def test_matches_pairwise_win_rate(self) -> None:
        rng = np.random.default_rng(9)
        scores = np.round(rng.random(120), 1)
        labels = rng.random(120) > 0.5
        positives, negatives = scores[labels], scores[~labels]
        wins = (positives[:, None] > negatives[None, :]).sum()
        ties = (positives[:, None] == negatives[None, :]).sum()
        expected = (wins + 0.5 * ties) / (len(positives) * len(negatives))
        assert roc_from_scores(scores, labels).auc == pytest.approx(expected, abs=1e-12)

    def test_monotone_transform_invariance(self) -> None:
        rng = np.random.default_rng(10)
        scores = rng.random(50)
        labels = rng.random(50) > 0.4
        a = roc_from_scores(scores, labels)
        b = roc_from_scores(np.exp(3 * scores) - 7, labels)
        assert a.auc == pytest.approx(b.auc)
        assert a.tpr_at_fpr == pytest.approx(b.tpr_at_fpr)

    def test_needs_both_classes(self) -> None:
        with pytest.raises(ContractError):
            roc_from_scores([0.1, 0.2], [True, True])

    def test_tpr_at_interpolates(self) -> None:
        fpr = np.array([0.0, 0.0, 0.5, 1.0])
        tpr = np.array([0.0, 0.4, 0.8, 1.0])
        assert tpr_at(fpr, tpr, 0.0) == pytest.approx(0.4)
        assert tpr_at(fpr, tpr, 0.25) == pytest.approx(0.6)
        assert tpr_at(fpr, tpr, 1.0) == pytest.approx(1.0)


class TestVerification:
    def test_cosine_similarity(self) -> None:
        assert cosine_similarity([1.0, 0.0], [0.0, 2.0]) == 0.0
        assert cosine_similarity([1.0, 1.0], [2.0, 2.0]) == pytest.approx(1.0)
        assert cosine_similarity([0.0, 0.0], [1.0, 0.0]) == 0.0

    def test_pair_protocol(self) -> None:
        gallery = [np.eye(3)[i] for i in range(3)]
        pairs = verification_pairs(gallery, gallery)
        assert [p.same_identity for p in pairs] == [True, False] * 3
        np.testing.assert_array_equal(pairs[5].embedding_a, gallery[0])

    def test_identical_probes_verify_perfectly(self) -> None:
        gallery = [noise((8,), seed) - 0.5 for seed in range(6)]
        result = roc_auc(verification_pairs(gallery, gallery))
        assert result.auc == 1.0

    def test_needs_two_identities(self) -> None:
        with pytest.raises(ContractError):
            verification_pairs([np.ones(2)], [np.ones(2)])

    def test_length_mismatch(self) -> None:
        with pytest.raises(ShapeError):
            verification_pairs([np.ones(2)] * 3, [np.ones(2)] * 2)

import numpy as np
import pytest

from sofa.metrics import (accuracy, auc, dice_score, kfold_split,
                          mean_std, mse, percent_reduction, psnr, psnr_from_mse,
                          ssim)


class TestMseAndPsnr:
    def test_identical_images(self):
        a = np.random.default_rng(0).uniform(0, 1, (3, 16, 16))
        assert mse(a, a) == 0.0
        assert psnr(a, a) == 99.0

    def test_uniform_difference(self):
        a = np.zeros((3, 8, 8))
        b = np.full((3, 8, 8), 0.1)
        assert mse(a, b) == pytest.approx(0.01)
        assert psnr(a, b) == pytest.approx(20.0, abs=1e-9)

    def test_exact_twenty_db_from_mse(self):
        assert psnr_from_mse(0.01, 1.0) == 20.0

    def test_table_pairing_note(self):
        # mean MSE 0.018 corresponds to 17.447 dB by the direct formula; the
        # harness averages per-image PSNR instead, which is why a table can
        # legitimately pair 0.018 with a higher mean PSNR
        assert psnr_from_mse(0.018) == pytest.approx(17.447, abs=5e-4)
        errs = [0.01, 0.026]  # mean 0.018
        per_image = np.mean([psnr_from_mse(e) for e in errs])
        assert per_image > psnr_from_mse(float(np.mean(errs)))

    def test_monotone_decreasing_in_mse(self):
        values = [psnr_from_mse(e) for e in (1e-4, 1e-3, 1e-2, 1e-1)]
        assert values == sorted(values, reverse=True)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            mse(np.zeros((3, 4, 4)), np.zeros((3, 5, 5)))


class TestSsim:
    def test_identical_images_score_one(self):
        a = np.random.default_rng(1).uniform(0, 1, (3, 24, 24))
        assert ssim(a, a) == pytest.approx(1.0)

    def test_noise_lowers_score(self):
        rng = np.random.default_rng(2)
        a = rng.uniform(0.2, 0.8, (1, 32, 32))
        b = np.clip(a + rng.normal(0, 0.1, a.shape), 0, 1)
        assert ssim(a, b) < ssim(a, a)

    def test_matches_reference_implementation(self):
        skimage = pytest.importorskip("skimage.metrics")
        rng = np.random.default_rng(3)
        a = rng.uniform(0, 1, (32, 32))
        b = np.clip(a + rng.normal(0, 0.05, a.shape), 0, 1)
        ours = ssim(a, b)
        ref = skimage.structural_similarity(
            a, b, data_range=1.0, gaussian_weights=True, sigma=1.5,
            use_sample_covariance=False)
        assert ours == pytest.approx(ref, abs=1e-7)

    def test_too_small_image_rejected(self):
        with pytest.raises(ValueError):
            ssim(np.zeros((1, 8, 8)), np.zeros((1, 8, 8)))


class TestDice:
    def test_identical_masks(self):
        m = (np.random.default_rng(0).uniform(0, 1, (1, 8, 8)) > 0.5).astype(float)
        assert dice_score(m, m) == 1.0

    def test_disjoint_masks(self):
        a = np.zeros((1, 4, 4))
        b = np.zeros((1, 4, 4))
        a[0, 0, 0] = 1
        b[0, 3, 3] = 1
        assert dice_score(a, b) == 0.0

    def test_half_overlap(self):
        a = np.zeros((1, 4, 4))
        b = np.zeros((1, 4, 4))
        a[0, 0, 0] = a[0, 0, 1] = 1
        b[0, 0, 1] = b[0, 0, 2] = 1
        assert dice_score(a, b) == pytest.approx(0.5)

    def test_empty_empty_is_one(self):
        assert dice_score(np.zeros((1, 4, 4)), np.zeros((1, 4, 4))) == 1.0

    def test_symmetry(self):
        rng = np.random.default_rng(4)
        a = rng.uniform(0, 1, (1, 8, 8))
        b = rng.uniform(0, 1, (1, 8, 8))
        assert dice_score(a, b) == dice_score(b, a)


def brute_force_auc(scores, labels):
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    wins = 0.0
    for p in pos:
        for n in neg:
            wins += 1.0 if p > n else (0.5 if p == n else 0.0)
    return wins / (len(pos) * len(neg))


class TestAuc:
    def test_perfect_separation(self):
        assert auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0

    def test_constant_scores_tie_convention(self):
        assert auc([0.5] * 6, [0, 1, 0, 1, 0, 1]) == 0.5

    def test_worked_example(self):
        scores = [0.1, 0.4, 0.35, 0.8]
        labels = [0, 0, 1, 1]
        expected = brute_force_auc(scores, labels)
        assert expected == 0.75
        assert auc(scores, labels) == pytest.approx(expected)

    def test_matches_brute_force_on_random_instances(self):
        rng = np.random.default_rng(5)
        for _ in range(25):
            n = int(rng.integers(4, 20))
            scores = np.round(rng.uniform(0, 1, n), 1)  # force some ties
            labels = rng.integers(0, 2, n)
            if labels.min() == labels.max():
                continue
            assert auc(scores, labels) == pytest.approx(brute_force_auc(scores, labels))

    def test_single_class_undefined(self):
        assert auc([0.2, 0.8], [1, 1]) is None

    def test_invariant_under_monotone_transform(self):
        rng = np.random.default_rng(6)
        scores = rng.uniform(0, 1, 30)
        labels = rng.integers(0, 2, 30)
        assert auc(scores, labels) == pytest.approx(auc(np.exp(3 * scores), labels))

    def test_accuracy_threshold(self):
        assert accuracy([0.2, 0.7, 0.6, 0.4], [0, 1, 0, 0]) == 0.75


class TestKfold:
    def test_ten_ids_five_folds_of_two(self):
        split = kfold_split([f"s{i}" for i in range(10)], k=5, seed=0)
        assert all(len(f) == 2 for f in split.folds)

    def test_cohort_of_235_gives_folds_of_47(self):
        split = kfold_split([f"s{i}" for i in range(235)], k=5, seed=0)
        assert [len(f) for f in split.folds] == [47] * 5

    def test_disjoint_union_and_balance(self):
        ids = [f"s{i}" for i in range(23)]
        split = kfold_split(ids, k=5, seed=3)
        flat = [i for f in split.folds for i in f]
        assert sorted(flat) == sorted(ids)
        sizes = [len(f) for f in split.folds]
        assert max(sizes) - min(sizes) <= 1

    def test_deterministic_in_seed(self):
        ids = [f"s{i}" for i in range(12)]
        assert kfold_split(ids, 4, 9).folds == kfold_split(ids, 4, 9).folds
        assert kfold_split(ids, 4, 9).folds != kfold_split(ids, 4, 10).folds

    def test_k_exceeding_n_rejected(self):
        with pytest.raises(ValueError):
            kfold_split(["a", "b"], k=3, seed=0)

    def test_train_test_partition(self):
        split = kfold_split([f"s{i}" for i in range(10)], k=5, seed=1)
        for fold in range(5):
            assert set(split.train_ids(fold)) | set(split.test_ids(fold)) == {f"s{i}" for i in range(10)}
            assert not set(split.train_ids(fold)) & set(split.test_ids(fold))


class TestReduction:
    def test_paper_triple_reproduced_exactly(self):
        assert round(percent_reduction(0.487, 0.379), 2) == 22.18

    def test_simple_arithmetic(self):
        assert percent_reduction(0.5, 0.35) == pytest.approx(30.0)

    def test_identity_is_zero(self):
        assert percent_reduction(0.4, 0.4) == 0.0

    def test_zero_baseline_rejected(self):
        with pytest.raises(ValueError):
            percent_reduction(0.0, 0.0)

    def test_mean_std_shape(self):
        out = mean_std([1.0, 2.0, 3.0])
        assert out["mean"] == 2.0
        assert out["per_fold"] == [1.0, 2.0, 3.0]

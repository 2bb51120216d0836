import math

import numpy as np
import pytest
import torch

from sofa.classifier import (ClassifierConfig, RiskClassifier, ViewEmbedding,
                             aggregate_views, bce_loss, embed_study, embed_view,
                             load_classifier, predict_risk, save_classifier,
                             train_phase2, _scores)
from sofa.checkpoints import save_checkpoint
from sofa.study import ParamMaps, Study, VIEW_ORDER, ViewId, ViewSample


class TestEmbedding:
    def test_dimension_matches_bottleneck_channels(self, trained_gen, cohort):
        gen, _ = trained_gen
        emb = embed_view(cohort[0].samples[ViewId.ANTERIOR], gen)
        assert emb.z.shape == (gen.config.channels,)

    def test_deterministic(self, trained_gen, cohort):
        gen, _ = trained_gen
        sample = cohort[0].samples[ViewId.POSTERIOR]
        a = embed_view(sample, gen)
        b = embed_view(sample, gen)
        assert np.array_equal(a.z, b.z)

    def test_ablation_changes_embedding(self, trained_gen, cohort):
        gen, _ = trained_gen
        study = cohort[0]
        zeroed = {
            v: ViewSample(view=v, pre=s.pre,
                          params=ParamMaps(np.zeros_like(s.params.channels),
                                           s.params.ranges))
            for v, s in study.samples.items()
        }
        z_real = embed_study(study, gen)
        z_zero = embed_study(Study(id="cf", samples=zeroed), gen)
        assert np.linalg.norm(z_real - z_zero) > 0


class TestAggregateViews:
    def test_mean_of_identical_vectors(self):
        v = np.array([1.0, 2.0, 3.0])
        embs = [ViewEmbedding(z=v, view=view) for view in VIEW_ORDER]
        assert np.allclose(aggregate_views(embs), v)

    def test_two_view_arithmetic_on_padded_set(self):
        zs = {view: np.zeros(2) for view in VIEW_ORDER}
        zs[ViewId.ANTERIOR] = np.array([1.0, 3.0])
        zs[ViewId.POSTERIOR] = np.array([3.0, 1.0])
        embs = [ViewEmbedding(z=z, view=v) for v, z in zs.items()]
        expected = (np.array([1.0, 3.0]) + np.array([3.0, 1.0])) / 6.0
        assert np.allclose(aggregate_views(embs), expected)

    def test_permutation_invariance_is_bitwise(self):
        rng = np.random.default_rng(0)
        embs = [ViewEmbedding(z=rng.normal(size=8), view=v) for v in VIEW_ORDER]
        shuffled = [embs[i] for i in [3, 0, 5, 1, 4, 2]]
        assert np.array_equal(aggregate_views(embs), aggregate_views(shuffled))

    def test_missing_view_rejected(self):
        embs = [ViewEmbedding(z=np.zeros(4), view=v) for v in VIEW_ORDER[:-1]]
        with pytest.raises(ValueError, match="inferior"):
            aggregate_views(embs)


class TestPredictRisk:
    def test_zero_final_layer_gives_logit_zero(self):
        torch.manual_seed(0)
        clf = RiskClassifier(8, hidden=4)
        with torch.no_grad():
            clf.fc2.weight.zero_()
            clf.fc2.bias.zero_()
        logit = predict_risk(np.random.default_rng(0).normal(size=8), clf)
        assert logit == 0.0
        assert 1 / (1 + math.exp(-logit)) == 0.5

    def test_deterministic(self):
        torch.manual_seed(1)
        clf = RiskClassifier(8, hidden=4)
        z = np.random.default_rng(1).normal(size=8)
        assert predict_risk(z, clf) == predict_risk(z, clf)

    def test_dimension_mismatch_rejected(self):
        clf = RiskClassifier(8, hidden=4)
        with pytest.raises(ValueError, match="size 8"):
            predict_risk(np.zeros(5), clf)

    def test_calibration_against_oracle_probability(self, stack, eval_studies, trained_gen):
        gen, _ = trained_gen
        x = np.stack([embed_study(s, gen) for s in eval_studies]).astype(np.float32)
        scores = _scores(stack.clf, x)
        oracle = np.array([s.meta["p"] for s in eval_studies])
        assert abs(scores.mean() - oracle.mean()) <= 0.1


class TestBceLoss:
    def test_ln2_at_zero_logit(self):
        assert float(bce_loss(0.0, 1)) == pytest.approx(math.log(2), abs=1e-9)
        assert float(bce_loss(0.0, 0)) == pytest.approx(math.log(2), abs=1e-9)

    def test_softplus_identity(self):
        assert float(bce_loss(2.0, 1)) == pytest.approx(0.126928, abs=1e-6)

    def test_gradient_is_sigmoid_minus_label(self):
        for y in (0.0, 1.0):
            for logit in (-3.0, -0.5, 0.0, 1.7, 4.0):
                t = torch.tensor(logit, dtype=torch.float64, requires_grad=True)
                bce_loss(t, y).backward()
                expected = 1 / (1 + math.exp(-logit)) - y
                assert abs(float(t.grad) - expected) <= 1e-8

    def test_monotonicity_and_convexity(self):
        logits = np.linspace(-4, 4, 33)
        up = [float(bce_loss(float(l), 1)) for l in logits]
        down = [float(bce_loss(float(l), 0)) for l in logits]
        assert all(a > b for a, b in zip(up, up[1:]))  # decreasing in logit for y=1
        assert all(a < b for a, b in zip(down, down[1:]))
        second = np.diff(up, 2)
        assert (second >= -1e-9).all()  # convex

    def test_extreme_logits_stay_finite(self):
        assert np.isfinite(float(bce_loss(500.0, 0)))
        assert np.isfinite(float(bce_loss(-500.0, 1)))


class TestTrainPhase2:
    def test_extractor_untouched_by_training(self, rc_strong, cohort, trained_gen):
        from sofa.checkpoints import save_checkpoint
        gen, _ = trained_gen
        before = {k: v.clone() for k, v in gen.state_dict().items()}
        train_phase2(cohort[:32], gen, ClassifierConfig(epochs=20, folds=4))
        after = gen.state_dict()
        assert all(torch.equal(before[k], after[k]) for k in before)

    def test_unlabeled_study_rejected(self, cohort, trained_gen):
        import dataclasses
        gen, _ = trained_gen
        studies = [dataclasses.replace(cohort[0], label=None)] + cohort[1:8]
        with pytest.raises(ValueError, match="unlabeled"):
            train_phase2(studies, gen, ClassifierConfig(folds=4))

    def test_same_seed_reproduces_auc(self, cohort, trained_gen):
        gen, _ = trained_gen
        cfg = ClassifierConfig(epochs=30, folds=4, seed=5)
        _, a = train_phase2(cohort[:24], gen, cfg)
        _, b = train_phase2(cohort[:24], gen, cfg)
        assert abs(a["auc"]["mean"] - b["auc"]["mean"]) <= 1e-6

    def test_strong_labels_learnable(self, trained_clf):
        _, report = trained_clf
        assert report["auc"]["mean"] > 0.8

    def test_checkpoint_round_trip(self, tmp_path, trained_clf, rc_strong):
        clf, report = trained_clf
        save_classifier(clf, rc_strong.classifier, tmp_path / "c", "fakehash", report)
        loaded, meta = load_classifier(tmp_path / "c")
        z = np.random.default_rng(2).normal(size=clf.dim).astype(np.float32)
        assert predict_risk(z, loaded) == predict_risk(z, clf)
        assert meta["extractor_hash"] == "fakehash"

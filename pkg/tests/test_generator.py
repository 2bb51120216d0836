import dataclasses
import math

import numpy as np
import pytest
import torch

from sofa.generator import (CrossAttentionFusion, FusionGenerator, GeneratorConfig,
                            cross_attention_fuse, dice_term, load_generator,
                            phase1_loss, save_generator, train_phase1)

TINY = GeneratorConfig(resolution=32, channels=4, depth=4, mask_hidden=4, seed=0)


def tiny_model(seed=0, **kwargs) -> FusionGenerator:
    torch.manual_seed(seed)
    return FusionGenerator(dataclasses.replace(TINY, seed=seed, **kwargs)).eval()


def brute_force_attention(z_pre, z_feat, wq, wk, wv, wo):
    """Loop-and-softmax evaluation on [C,Hb,Wb] float64 arrays."""
    c = z_pre.shape[0]
    zp = z_pre.reshape(c, -1).T  # [N,C], row-major spatial
    zf = z_feat.reshape(c, -1).T
    n = zp.shape[0]
    q = np.stack([wq @ zp[i] for i in range(n)])
    k = np.stack([wk @ zf[i] for i in range(n)])
    v = np.stack([wv @ zf[i] for i in range(n)])
    out = np.zeros((n, c))
    for i in range(n):
        logits = np.array([q[i] @ k[j] for j in range(n)]) / math.sqrt(c)
        ex = np.exp(logits - logits.max())
        weights = ex / ex.sum()
        fused = sum(weights[j] * v[j] for j in range(n))
        out[i] = wo @ fused
    return out.T.reshape(z_pre.shape)


class TestEncoders:
    def test_shapes(self):
        model = tiny_model()
        z = model.encode_pre(torch.rand(3, 32, 32))
        assert z.shape == (1, 4, 2, 2)
        z = model.encode_feat(torch.rand(4, 32, 32))
        assert z.shape == (1, 4, 2, 2)

    def test_default_resolution_shape_contract(self):
        cfg = GeneratorConfig(resolution=256, channels=128, depth=4)
        assert cfg.bottleneck == 16  # 128x16x16 bottleneck at 256 px input

    def test_eval_determinism(self):
        model = tiny_model()
        x = torch.rand(3, 32, 32)
        assert torch.equal(model.encode_pre(x), model.encode_pre(x))

    def test_different_seeds_give_different_encoders(self):
        x = torch.rand(3, 32, 32)
        a = tiny_model(seed=1).encode_pre(x)
        b = tiny_model(seed=2).encode_pre(x)
        assert (a - b).norm() > 0

    def test_zero_params_give_fixed_bias_embedding(self):
        model = tiny_model()
        z1 = model.encode_feat(torch.zeros(4, 32, 32))
        z2 = model.encode_feat(torch.zeros(4, 32, 32))
        assert torch.equal(z1, z2)

    def test_extreme_inputs_stay_finite(self):
        model = tiny_model()
        z = model.encode_feat(torch.ones(4, 32, 32))
        assert torch.isfinite(z).all()

    def test_shape_mismatch_rejected(self):
        model = tiny_model()
        with pytest.raises(ValueError, match="expected"):
            model.encode_pre(torch.rand(3, 16, 16))
        with pytest.raises(ValueError, match="expected"):
            model.encode_feat(torch.rand(3, 32, 32))


class TestCrossAttention:
    def test_single_position_ignores_query_and_key_weights(self):
        torch.manual_seed(0)
        fusion = CrossAttentionFusion(4).double()
        z_pre = torch.rand(4, 1, 1, dtype=torch.float64)
        z_feat = torch.rand(4, 1, 1, dtype=torch.float64)
        out = cross_attention_fuse(z_pre, z_feat, fusion)
        wo = fusion.w_o.weight.detach().numpy()
        wv = fusion.w_v.weight.detach().numpy()
        expected = wo @ (wv @ z_feat.numpy().reshape(4))
        assert np.allclose(out.detach().numpy().reshape(4), expected, atol=1e-12)
        # changing W_q cannot matter with a single key
        with torch.no_grad():
            fusion.w_q.weight.mul_(3.0)
        out2 = cross_attention_fuse(z_pre, z_feat, fusion)
        assert torch.allclose(out, out2)

    def test_identical_keys_average_values(self):
        torch.manual_seed(1)
        fusion = CrossAttentionFusion(4).double()
        z_pre = torch.rand(4, 2, 2, dtype=torch.float64)
        z_feat = torch.ones(4, 2, 2, dtype=torch.float64) * 0.7
        out = cross_attention_fuse(z_pre, z_feat, fusion).detach().numpy().reshape(4, -1)
        # every spatial position of z_feat is identical, so every fused row
        # equals W_o W_v applied to that shared feature vector
        wo = fusion.w_o.weight.detach().numpy()
        wv = fusion.w_v.weight.detach().numpy()
        expected = wo @ (wv @ (0.7 * np.ones(4)))
        for i in range(out.shape[1]):
            assert np.allclose(out[:, i], expected, atol=1e-12)

    def test_matches_brute_force_dense_evaluation(self):
        torch.manual_seed(2)
        fusion = CrossAttentionFusion(4).double()
        rng = np.random.default_rng(3)
        z_pre = rng.normal(size=(4, 3, 1))
        z_feat = rng.normal(size=(4, 3, 1))
        out = cross_attention_fuse(torch.tensor(z_pre), torch.tensor(z_feat), fusion)
        expected = brute_force_attention(
            z_pre, z_feat,
            fusion.w_q.weight.detach().numpy(), fusion.w_k.weight.detach().numpy(),
            fusion.w_v.weight.detach().numpy(), fusion.w_o.weight.detach().numpy())
        assert np.abs(out.detach().numpy() - expected).max() < 1e-6

    def test_attention_rows_form_probability_simplex(self):
        torch.manual_seed(3)
        fusion = CrossAttentionFusion(8).double()
        for _ in range(5):
            z_pre = torch.randn(2, 8, 4, 4, dtype=torch.float64) * 5
            z_feat = torch.randn(2, 8, 4, 4, dtype=torch.float64) * 5
            w = fusion.attention_weights(z_pre, z_feat)
            assert (w >= 0).all()
            assert torch.allclose(w.sum(-1), torch.ones_like(w.sum(-1)), atol=1e-6)

    def test_permutation_equivariance(self):
        torch.manual_seed(4)
        fusion = CrossAttentionFusion(4).double()
        z_pre = torch.randn(1, 4, 2, 2, dtype=torch.float64)
        z_feat = torch.randn(1, 4, 2, 2, dtype=torch.float64)
        out = fusion(z_pre, z_feat).flatten(2)
        perm = torch.tensor([2, 0, 3, 1])
        zp = z_pre.flatten(2)[:, :, perm].reshape(1, 4, 2, 2)
        zf = z_feat.flatten(2)[:, :, perm].reshape(1, 4, 2, 2)
        out_p = fusion(zp, zf).flatten(2)
        assert torch.allclose(out[:, :, perm], out_p, atol=1e-10)

    def test_channel_mismatch_rejected(self):
        fusion = CrossAttentionFusion(8)
        with pytest.raises(ValueError, match="C=8"):
            fusion(torch.rand(1, 4, 2, 2), torch.rand(1, 4, 2, 2))


class TestDecoderAndMask:
    def test_decode_shape_and_bounds(self):
        model = tiny_model()
        b, skips = model.bottleneck(torch.rand(1, 3, 32, 32), torch.rand(1, 4, 32, 32))
        out = model.decoder(torch.randn(1, 4, 2, 2), skips)
        assert out.shape == (1, 3, 32, 32)
        assert out.min() >= 0.0 and out.max() <= 1.0

    def test_decode_gradient_matches_finite_differences(self):
        model = tiny_model().double()
        pre = torch.rand(1, 3, 32, 32, dtype=torch.float64)
        feat = torch.rand(1, 4, 32, 32, dtype=torch.float64)
        _, skips = model.bottleneck(pre, feat)
        b = torch.randn(1, 4, 2, 2, dtype=torch.float64, requires_grad=True)
        weights = torch.randn(1, 3, 32, 32, dtype=torch.float64)

        def f(x):
            return (model.decoder(x, skips) * weights).sum()

        (grad,) = torch.autograd.grad(f(b), b)
        h = 1e-6
        rng = np.random.default_rng(0)
        for _ in range(8):
            idx = tuple(rng.integers(0, s) for s in b.shape)
            bp = b.detach().clone()
            bm = b.detach().clone()
            bp[idx] += h
            bm[idx] -= h
            fd = (f(bp) - f(bm)).item() / (2 * h)
            an = grad[idx].item()
            assert abs(an - fd) <= 1e-3 * max(abs(an), abs(fd), 1e-6)

    def test_zero_mask_head_gives_half_everywhere(self):
        model = tiny_model()
        with torch.no_grad():
            for p in model.mask_head.parameters():
                p.zero_()
        logits = model.mask_head(torch.rand(1, 3, 32, 32))
        assert torch.equal(torch.sigmoid(logits), torch.full_like(logits, 0.5))

    def test_scar_probabilities_strictly_inside_unit_interval(self):
        model = tiny_model()
        m = torch.sigmoid(model.mask_head(torch.rand(2, 3, 32, 32)))
        assert m.min() > 0.0 and m.max() < 1.0


class TestLosses:
    def test_dice_perfect_overlap(self):
        m = torch.ones(1, 2, 2)
        assert float(dice_term(m, m, 1e-6)) == pytest.approx(0.0, abs=1e-9)

    def test_dice_disjoint(self):
        a = torch.zeros(1, 2, 2)
        b = torch.zeros(1, 2, 2)
        a[0, 0, 0] = 1
        b[0, 1, 1] = 1
        assert float(dice_term(a, b, 1e-6)) == pytest.approx(1.0, abs=1e-5)

    def test_dice_half_overlap(self):
        a = torch.zeros(1, 1, 4)
        b = torch.zeros(1, 1, 4)
        a[0, 0, :2] = 1
        b[0, 0, 1:3] = 1
        assert float(dice_term(a, b, 1e-6)) == pytest.approx(0.5, abs=1e-6)

    def test_dice_empty_empty_is_zero_loss(self):
        z = torch.zeros(1, 3, 3)
        assert float(dice_term(z, z, 1e-6)) == 0.0

    def test_phase1_loss_zero_iff_exact(self):
        img = torch.rand(3, 8, 8)
        mask = (torch.rand(1, 8, 8) > 0.5).float()
        assert float(phase1_loss(img, img, mask, mask)) == pytest.approx(0.0, abs=1e-9)

    def test_phase1_loss_l1_arithmetic(self):
        img = torch.full((3, 4, 4), 0.3)
        mask = torch.ones(1, 4, 4)
        loss = phase1_loss(img + 0.1, img, mask, mask, dice_weight=1.0)
        assert float(loss) == pytest.approx(0.1, abs=1e-6)

    def test_phase1_loss_matches_independent_formula(self):
        rng = np.random.default_rng(7)
        pred = rng.uniform(0, 1, (3, 6, 6))
        gt = rng.uniform(0, 1, (3, 6, 6))
        mh = rng.uniform(0, 1, (1, 6, 6))
        m = (rng.uniform(0, 1, (1, 6, 6)) > 0.5).astype(float)
        lam, eps = 0.7, 1e-6
        expected = np.abs(pred - gt).mean() + lam * (
            1 - (2 * (mh * m).sum() + eps) / (mh.sum() + m.sum() + eps))
        got = float(phase1_loss(torch.tensor(pred), torch.tensor(gt),
                                torch.tensor(mh), torch.tensor(m), lam, eps))
        assert got == pytest.approx(expected, abs=1e-6)

    def test_phase1_loss_nonnegative(self):
        rng = np.random.default_rng(8)
        for _ in range(10):
            args = [torch.tensor(rng.uniform(0, 1, (3, 4, 4))) for _ in range(2)]
            masks = [torch.tensor(rng.uniform(0, 1, (1, 4, 4))) for _ in range(2)]
            assert float(phase1_loss(*args, *masks)) >= 0.0

    def test_parameter_gradients_match_finite_differences(self):
        model = tiny_model().double().train()
        pre = torch.rand(1, 3, 32, 32, dtype=torch.float64)
        feat = torch.rand(1, 4, 32, 32, dtype=torch.float64)
        post = torch.rand(1, 3, 32, 32, dtype=torch.float64)
        scar = (torch.rand(1, 1, 32, 32) > 0.7).double()

        def loss_fn():
            post_hat, logits, _ = model(pre, feat)
            return phase1_loss(post_hat[0], post[0], torch.sigmoid(logits)[0], scar[0])

        loss = loss_fn()
        loss.backward()
        rng = np.random.default_rng(1)
        h = 1e-6
        checked = 0
        for name, p in model.named_parameters():
            if p.grad is None:
                continue
            flat = p.detach().reshape(-1)
            for _ in range(2):
                i = int(rng.integers(0, flat.numel()))
                with torch.no_grad():
                    flat[i] += h
                    up = float(loss_fn())
                    flat[i] -= 2 * h
                    down = float(loss_fn())
                    flat[i] += h
                fd = (up - down) / (2 * h)
                an = float(p.grad.reshape(-1)[i])
                assert abs(an - fd) <= 1e-3 * max(abs(an), abs(fd), 1e-6), name
                checked += 1
        assert checked >= 20


@pytest.fixture(scope="module")
def smoke_history(rc_strong, cohort):
    cfg = dataclasses.replace(rc_strong.generator, epochs=20, seed=0)
    model, history = train_phase1(cohort[:8], cfg)
    return cfg, model, history


class TestTraining:
    def test_loss_drops_thirty_percent_on_smoke_cohort(self, smoke_history):
        _, _, history = smoke_history
        assert history["train_loss"][-1] < 0.7 * history["initial_loss"]

    def test_rerun_reproduces_loss_exactly(self, rc_strong, cohort, smoke_history):
        cfg, _, history = smoke_history
        _, again = train_phase1(cohort[:8], cfg)
        assert abs(again["train_loss"][-1] - history["train_loss"][-1]) <= 1e-6

    def test_missing_targets_rejected(self, rc_strong, cohort):
        import dataclasses as dc
        from sofa.study import Study, ViewSample
        study = cohort[0]
        stripped = {v: ViewSample(view=v, pre=s.pre, params=s.params)
                    for v, s in study.samples.items()}
        bad = Study(id="bad", samples=stripped)
        with pytest.raises(ValueError, match="missing post/scar"):
            train_phase1([bad], dc.replace(rc_strong.generator, epochs=1))

    def test_checkpoint_round_trip_preserves_outputs(self, tmp_path, smoke_history):
        _, model, history = smoke_history
        save_generator(model, tmp_path / "g", history)
        loaded, meta = load_generator(tmp_path / "g")
        x = torch.rand(1, 3, 48, 48)
        f = torch.rand(1, 4, 48, 48)
        a = model(x, f)
        b = loaded(x, f)
        assert torch.equal(a[0], b[0]) and torch.equal(a[1], b[1])
        assert meta["kind"] == "generator"
        assert meta["final_train_loss"] == pytest.approx(history["train_loss"][-1])

    def test_wrong_checkpoint_kind_rejected(self, tmp_path, smoke_history):
        from sofa.checkpoints import load_checkpoint
        _, model, history = smoke_history
        save_generator(model, tmp_path / "g", history)
        with pytest.raises(ValueError, match="kind"):
            load_checkpoint(tmp_path / "g", lambda c: model, "classifier")

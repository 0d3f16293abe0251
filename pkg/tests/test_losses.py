"""Objectives: LSGAN forms, transport-entropy, SSIM vs reference, PatchNCE, composition."""

import math

import numpy as np
import pytest
import torch
from skimage.metrics import structural_similarity
from torch import nn

from cunsb.losses import (
    LossReport,
    LossWeights,
    adversarial_loss,
    compose_total,
    patchnce_loss,
    sb_loss,
    ssim_index,
    ssim_regularization,
    total_loss,
)
from gradcheck import fd_grad, rel_error


class TestLossWeights:
    def test_defaults(self):
        w = LossWeights()
        assert (w.lambda_sb, w.lambda_p, w.lambda_s) == (1.0, 1.0, 0.8)

    def test_rejects_negative(self):
        with pytest.raises(ValueError):
            LossWeights(lambda_s=-0.1)


class TestAdversarialLoss:
    def test_generator_optimum(self):
        fake = torch.ones(2, 1, 6, 6)
        assert adversarial_loss(None, fake, "generator").item() == 0.0

    def test_discriminator_optimum(self):
        real = torch.ones(2, 1, 6, 6)
        fake = torch.zeros(2, 1, 6, 6)
        assert adversarial_loss(real, fake, "discriminator").item() == 0.0

    def test_half_logits(self):
        half = torch.full((3, 1, 4, 4), 0.5)
        assert adversarial_loss(half, half, "generator").item() == pytest.approx(0.25)
        assert adversarial_loss(half, half, "discriminator").item() == pytest.approx(0.5)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            adversarial_loss(torch.zeros(1, 1, 4, 4), torch.zeros(1, 1, 5, 5), "discriminator")

    def test_bad_role(self):
        with pytest.raises(ValueError):
            adversarial_loss(None, torch.zeros(1), "critic")

    def test_discriminator_needs_real(self):
        with pytest.raises(ValueError):
            adversarial_loss(None, torch.zeros(1), "discriminator")

    def test_finite_difference_gradient(self):
        rng = torch.Generator().manual_seed(0)
        fake = torch.randn(1, 1, 3, 3, generator=rng, dtype=torch.float64)
        auto = fake.clone().requires_grad_(True)
        adversarial_loss(None, auto, "generator").backward()
        fd = fd_grad(lambda v: adversarial_loss(None, v, "generator"), fake)
        assert rel_error(auto.grad, fd) < 1e-6


class TestSbLoss:
    def test_zero_at_perfect_transport_zero_mi(self):
        x = torch.randn(2, 3, 4, 4)
        assert sb_loss(x, x, 0.5, 0.01, 0.0).item() == 0.0

    def test_hand_computed(self):
        # all-ones vs all-minus-ones: squared difference 4 at every pixel
        x_ti = torch.ones(2, 1, 3, 3)
        x1 = -torch.ones(2, 1, 3, 3)
        out = sb_loss(x_ti, x1, 0.2, 0.01, 1.0)
        assert out.item() == pytest.approx(4.0 - 2 * 0.01 * 0.8 * 1.0)

    def test_horizon_boundary_ignores_statistic(self):
        x = torch.randn(2, 4)
        y = torch.randn(2, 4)
        transport = (x - y).square().mean()
        out = sb_loss(x, y, 1.0, 0.01, math.inf)
        assert out.item() == pytest.approx(transport.item())
        assert math.isfinite(out.item())

    def test_zero_tau_ignores_statistic(self):
        x = torch.randn(3, 5)
        out = sb_loss(x, torch.zeros_like(x), 0.3, 0.0, math.nan)
        assert math.isfinite(out.item())

    def test_transport_nonnegative(self):
        rng = torch.Generator().manual_seed(1)
        for _ in range(10):
            x = torch.randn(2, 6, generator=rng)
            y = torch.randn(2, 6, generator=rng)
            assert sb_loss(x, y, 0.4, 0.0, 0.0).item() >= 0.0

    def test_validation(self):
        x = torch.zeros(2, 4)
        with pytest.raises(ValueError):
            sb_loss(x, torch.zeros(3, 4), 0.5, 0.01, 0.0)
        with pytest.raises(ValueError):
            sb_loss(x, x, 1.5, 0.01, 0.0)
        with pytest.raises(ValueError):
            sb_loss(x, x, 0.5, -0.01, 0.0)

    def test_finite_difference_gradient(self):
        rng = torch.Generator().manual_seed(2)
        x_ti = torch.randn(1, 1, 3, 3, generator=rng, dtype=torch.float64)
        x1 = torch.randn(1, 1, 3, 3, generator=rng, dtype=torch.float64)
        auto = x1.clone().requires_grad_(True)
        sb_loss(x_ti, auto, 0.2, 0.01, 0.5).backward()
        fd = fd_grad(lambda v: sb_loss(x_ti, v, 0.2, 0.01, 0.5), x1)
        assert rel_error(auto.grad, fd) < 1e-6


def _rand01(shape, seed):
    return torch.from_numpy(np.random.default_rng(seed).uniform(0, 1, size=shape))


class TestSsimIndex:
    def test_self_similarity_exact_one(self):
        a = _rand01((1, 3, 48, 48), 3)
        assert float(ssim_index(a, a, window=11, scales=1, data_range=1.0)) == 1.0
        assert float(ssim_index(a, a, window=11, scales=3, data_range=1.0)) == 1.0

    def test_symmetry(self):
        a = _rand01((1, 1, 32, 32), 4)
        b = _rand01((1, 1, 32, 32), 5)
        lhs = float(ssim_index(a, b, window=11, scales=1, data_range=1.0))
        rhs = float(ssim_index(b, a, window=11, scales=1, data_range=1.0))
        assert lhs == pytest.approx(rhs, abs=1e-9)

    def test_single_scale_matches_reference(self):
        # independent reference: scikit-image with matching settings
        rng = np.random.default_rng(6)
        a = rng.uniform(0, 1, size=(40, 40))
        b = np.clip(a + rng.normal(0, 0.1, size=(40, 40)), 0, 1)
        ref = structural_similarity(a, b, gaussian_weights=True, sigma=1.5,
                                    use_sample_covariance=False, data_range=1.0)
        mine = float(ssim_index(torch.from_numpy(a), torch.from_numpy(b),
                                window=11, scales=1, data_range=1.0))
        assert mine == pytest.approx(ref, abs=1e-7)

    def test_single_scale_multichannel_matches_reference(self):
        rng = np.random.default_rng(7)
        a = rng.uniform(0, 1, size=(36, 44, 3))
        b = rng.uniform(0, 1, size=(36, 44, 3))
        ref = structural_similarity(a, b, gaussian_weights=True, sigma=1.5,
                                    use_sample_covariance=False, data_range=1.0,
                                    channel_axis=2)
        mine = float(ssim_index(torch.from_numpy(a).permute(2, 0, 1),
                                torch.from_numpy(b).permute(2, 0, 1),
                                window=11, scales=1, data_range=1.0))
        assert mine == pytest.approx(ref, abs=1e-7)

    def test_inverted_checkerboard_low_similarity(self):
        tile = torch.tensor([[1.0, 0.0], [0.0, 1.0]])
        a = tile.repeat(32, 32)  # 64x64 checkerboard
        b = 1.0 - a
        val = float(ssim_index(a, b, window=11, scales=3, data_range=1.0))
        assert val < 0.2

    def test_bounded_on_random_pairs(self):
        for seed in range(5):
            a = _rand01((1, 1, 48, 48), 10 + seed) * 2 - 1
            b = _rand01((1, 1, 48, 48), 20 + seed) * 2 - 1
            v = float(ssim_index(a, b, window=11, scales=3, data_range=2.0))
            assert -1.0 <= v <= 1.0

    def test_scale_invariance_with_proportional_range(self):
        a = _rand01((1, 1, 32, 32), 30)
        b = _rand01((1, 1, 32, 32), 31)
        v1 = float(ssim_index(a, b, window=11, scales=1, data_range=1.0))
        v2 = float(ssim_index(2 * a, 2 * b, window=11, scales=1, data_range=2.0))
        assert v1 == pytest.approx(v2, abs=1e-9)

    def test_too_small_rejected(self):
        a = torch.zeros(1, 1, 20, 20)
        with pytest.raises(ValueError):
            ssim_index(a, a, window=11, scales=3, data_range=1.0)  # needs 44
        with pytest.raises(ValueError):
            ssim_index(torch.zeros(1, 1, 8, 8), torch.zeros(1, 1, 8, 8), window=11, scales=1)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            ssim_index(torch.zeros(1, 1, 16, 16), torch.zeros(1, 1, 16, 17), window=11, scales=1)

    def test_finite_difference_gradient(self):
        a = _rand01((1, 1, 12, 12), 40)
        b = _rand01((1, 1, 12, 12), 41)
        auto = b.clone().requires_grad_(True)
        ssim_index(a, auto, window=5, scales=1, data_range=1.0).backward()
        fd = fd_grad(lambda v: ssim_index(a, v, window=5, scales=1, data_range=1.0), b)
        assert rel_error(auto.grad, fd) < 1e-4


class TestSsimRegularization:
    def test_both_pairs_identical(self):
        a = _rand01((1, 1, 24, 24), 50)
        c = _rand01((1, 1, 24, 24), 51)
        out = ssim_regularization(a, a, c, c, window=11, scales=1, data_range=1.0)
        assert float(out) == pytest.approx(0.0, abs=1e-12)

    def test_linear_average_of_halves(self):
        a = _rand01((1, 1, 24, 24), 52)
        c = _rand01((1, 1, 24, 24), 53)
        d = _rand01((1, 1, 24, 24), 54)
        s = float(ssim_index(c, d, window=11, scales=1, data_range=1.0))
        out = float(ssim_regularization(a, a, c, d, window=11, scales=1, data_range=1.0))
        assert out == pytest.approx((0.0 + (1.0 - s)) / 2.0, abs=1e-9)

    def test_agrees_with_reference_ssim(self):
        rng = np.random.default_rng(55)
        a = rng.uniform(0, 1, size=(32, 32))
        b = rng.uniform(0, 1, size=(32, 32))
        c = rng.uniform(0, 1, size=(32, 32))
        d = rng.uniform(0, 1, size=(32, 32))
        ref = ((1 - structural_similarity(a, b, gaussian_weights=True, sigma=1.5,
                                          use_sample_covariance=False, data_range=1.0))
               + (1 - structural_similarity(c, d, gaussian_weights=True, sigma=1.5,
                                            use_sample_covariance=False, data_range=1.0))) / 2
        mine = float(ssim_regularization(torch.from_numpy(a), torch.from_numpy(b),
                                         torch.from_numpy(c), torch.from_numpy(d),
                                         window=11, scales=1, data_range=1.0))
        assert mine == pytest.approx(ref, abs=1e-6)


def _make_heads(channels, dim=32, seed=0):
    torch.manual_seed(seed)
    return nn.ModuleList([
        nn.Sequential(nn.Linear(c, dim), nn.ReLU(), nn.Linear(dim, dim)) for c in channels
    ]).double()


class TestPatchNceLoss:
    def test_single_patch_is_zero(self):
        rng = torch.Generator().manual_seed(60)
        feats = [torch.randn(2, 8, 4, 4, generator=rng, dtype=torch.float64)]
        heads = _make_heads([8])
        out = patchnce_loss(feats, [f + 0.1 for f in feats], heads, num_patches=1,
                            rng=torch.Generator().manual_seed(0))
        assert float(out.detach()) == 0.0

    def test_identical_features_below_uniform_entropy(self):
        rng = torch.Generator().manual_seed(61)
        feats = [torch.randn(1, 8, 8, 8, generator=rng, dtype=torch.float64)]
        heads = _make_heads([8])
        out = patchnce_loss(feats, feats, heads, temperature=0.07, num_patches=32,
                            rng=torch.Generator().manual_seed(0))
        assert float(out.detach()) < math.log(32)

    def test_uniform_logits_give_exactly_log_num_patches(self):
        # orthogonal source/generated embeddings make every logit equal, so the
        # cross-entropy must be exactly log(num_patches)
        p, c = 64, 128
        src = torch.zeros(p, c, dtype=torch.float64)
        gen = torch.zeros(p, c, dtype=torch.float64)
        for i in range(p):
            src[i, i] = 1.0
            gen[i, p + i] = 1.0
        src_map = src.t().reshape(1, c, 8, 8)
        gen_map = gen.t().reshape(1, c, 8, 8)
        heads = nn.ModuleList([nn.Identity()])
        out = patchnce_loss([src_map], [gen_map], heads, temperature=0.07,
                            num_patches=p, patch_ids=[torch.arange(p)])
        assert float(out) == pytest.approx(math.log(p), abs=1e-9)

    def test_random_features_near_log_num_patches(self):
        # near-uniform logits: independent high-dimensional patches have tiny
        # cosine similarity relative to the temperature
        vals = []
        for seed in range(6):
            rng = torch.Generator().manual_seed(seed)
            src = [torch.randn(1, 2048, 8, 8, generator=rng, dtype=torch.float64)]
            gen = [torch.randn(1, 2048, 8, 8, generator=rng, dtype=torch.float64)]
            heads = nn.ModuleList([nn.Identity()])
            vals.append(float(patchnce_loss(src, gen, heads, temperature=0.07,
                                            num_patches=64,
                                            rng=torch.Generator().manual_seed(seed))))
        mean = sum(vals) / len(vals)
        assert mean == pytest.approx(math.log(64), abs=0.3)

    def test_permutation_of_patch_ids_invariant(self):
        rng = torch.Generator().manual_seed(62)
        src = [torch.randn(2, 8, 6, 6, generator=rng, dtype=torch.float64)]
        gen = [torch.randn(2, 8, 6, 6, generator=rng, dtype=torch.float64)]
        heads = _make_heads([8])
        ids = torch.randperm(36, generator=rng)[:16]
        perm = torch.randperm(16, generator=rng)
        a = patchnce_loss(src, gen, heads, num_patches=16, patch_ids=[ids])
        b = patchnce_loss(src, gen, heads, num_patches=16, patch_ids=[ids[perm]])
        assert float(a.detach()) == pytest.approx(float(b.detach()), abs=1e-9)

    def test_seeded_sampling_deterministic(self):
        rng = torch.Generator().manual_seed(63)
        src = [torch.randn(1, 4, 8, 8, generator=rng, dtype=torch.float64)]
        gen = [torch.randn(1, 4, 8, 8, generator=rng, dtype=torch.float64)]
        heads = _make_heads([4])
        a = patchnce_loss(src, gen, heads, num_patches=16, rng=torch.Generator().manual_seed(7))
        b = patchnce_loss(src, gen, heads, num_patches=16, rng=torch.Generator().manual_seed(7))
        assert float(a.detach()) == float(b.detach())

    def test_too_few_locations_rejected(self):
        feats = [torch.zeros(1, 4, 3, 3, dtype=torch.float64)]
        heads = _make_heads([4])
        with pytest.raises(ValueError):
            patchnce_loss(feats, feats, heads, num_patches=16)

    def test_layer_count_mismatch_rejected(self):
        feats = [torch.zeros(1, 4, 8, 8, dtype=torch.float64)]
        heads = _make_heads([4, 4])
        with pytest.raises(ValueError):
            patchnce_loss(feats, feats, heads, num_patches=4)

    def test_multi_layer_average(self):
        rng = torch.Generator().manual_seed(64)
        src = [torch.randn(1, 4, 6, 6, generator=rng, dtype=torch.float64) for _ in range(3)]
        gen = [torch.randn(1, 4, 6, 6, generator=rng, dtype=torch.float64) for _ in range(3)]
        heads = _make_heads([4, 4, 4])
        ids = [torch.arange(9) for _ in range(3)]
        combined = float(patchnce_loss(src, gen, heads, num_patches=9, patch_ids=ids).detach())
        singles = [float(patchnce_loss([s], [g], nn.ModuleList([h]), num_patches=9,
                                       patch_ids=[i]).detach())
                   for s, g, h, i in zip(src, gen, heads, ids)]
        assert combined == pytest.approx(sum(singles) / 3, abs=1e-9)

    def test_finite_difference_gradient(self):
        rng = torch.Generator().manual_seed(65)
        src = torch.randn(1, 4, 4, 4, generator=rng, dtype=torch.float64)
        gen = torch.randn(1, 4, 4, 4, generator=rng, dtype=torch.float64)
        heads = _make_heads([4])
        ids = [torch.arange(8)]

        auto = gen.clone().requires_grad_(True)
        patchnce_loss([src], [auto], heads, num_patches=8, patch_ids=ids).backward()
        fd = fd_grad(lambda v: patchnce_loss([src], [v], heads, num_patches=8, patch_ids=ids), gen)
        assert rel_error(auto.grad, fd) < 1e-4


class TestTotalLoss:
    def _parts(self, **kw):
        base = dict(adv=0.0, sb_transport=0.0, sb_entropy=0.0, ssim_gen=0.0,
                    ssim_idt=0.0, patchnce=0.0)
        base.update(kw)
        return base

    def test_all_zero(self):
        rep = total_loss(self._parts(), LossWeights(), 0.5, 0.01)
        assert rep.total == 0.0

    def test_unit_parts_default_weights(self):
        parts = self._parts(adv=1.0, sb_transport=1.0, ssim_gen=1.0, ssim_idt=1.0, patchnce=1.0)
        rep = total_loss(parts, LossWeights(), 1.0, 0.01)  # horizon kills the entropy term
        assert rep.total == pytest.approx(1.0 + 1.0 + 0.8 + 1.0)

    def test_doubling_lambda_p(self):
        parts = self._parts(adv=0.3, sb_transport=0.7, sb_entropy=0.2, ssim_gen=0.4,
                            ssim_idt=0.1, patchnce=0.9)
        base = total_loss(parts, LossWeights(), 0.4, 0.01).total
        doubled = total_loss(parts, LossWeights(lambda_p=2.0), 0.4, 0.01).total
        assert doubled - base == pytest.approx(0.9, abs=1e-12)

    def test_decomposition_identity_random(self):
        rng = np.random.default_rng(70)
        for _ in range(25):
            parts = {k: float(v) for k, v in zip(
                ("adv", "sb_transport", "sb_entropy", "ssim_gen", "ssim_idt", "patchnce"),
                rng.normal(0, 2, size=6))}
            t_i = float(rng.uniform(0, 1))
            tau = float(rng.uniform(0, 0.5))
            w = LossWeights(*(float(x) for x in rng.uniform(0, 2, size=3)))
            rep = total_loss(parts, w, t_i, tau)
            expected = (rep.adv
                        + w.lambda_sb * (rep.sb_transport - 2 * tau * (1 - t_i) * rep.sb_entropy)
                        + w.lambda_s * (rep.ssim_gen + rep.ssim_idt) / 2
                        + w.lambda_p * rep.patchnce)
            assert rep.total == pytest.approx(expected, abs=1e-6)

    def test_tensor_parts_accepted(self):
        parts = self._parts(adv=torch.tensor(0.5), patchnce=torch.tensor(0.25))
        rep = total_loss(parts, LossWeights(), 0.5, 0.0)
        assert rep.adv == 0.5 and rep.patchnce == 0.25
        assert rep.total == pytest.approx(0.5 + 0.25)

    def test_missing_part_rejected(self):
        with pytest.raises(ValueError):
            total_loss({"adv": 1.0}, LossWeights(), 0.5, 0.01)

    def test_compose_total_matches_report_on_tensors(self):
        rng = torch.Generator().manual_seed(71)
        parts = {k: torch.randn((), generator=rng, dtype=torch.float64)
                 for k in ("adv", "sb_transport", "sb_entropy", "ssim_gen", "ssim_idt", "patchnce")}
        w = LossWeights(1.3, 0.6, 0.9)
        tensor_total = compose_total(parts, w, 0.3, 0.02)
        rep = total_loss(parts, w, 0.3, 0.02)
        assert float(tensor_total) == pytest.approx(rep.total, abs=1e-9)

    def test_report_row_order(self):
        rep = LossReport(1, 2, 3, 4, 5, 6, 7)
        assert rep.as_row() == [1, 2, 3, 4, 5, 6, 7]
        assert LossReport.FIELDS[-1] == "total"

import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import logsumexp
from scipy.stats import norm

from seqdisent.distributions import DiagonalGaussian, GaussianSequence
from seqdisent.objective import (REFERENCE_WEIGHTS, LossWeights, TrainingDivergenceError, elbo_terms, info_nce,
                                 mi_mws_static_dynamic, total_objective)


def t(x):
    return torch.tensor(x, dtype=torch.float64)


class TestElbo:
    def test_perfect_reconstruction_and_matched_prior(self):
        x = torch.rand(3, 2, 4, dtype=torch.float64)
        static = DiagonalGaussian(torch.zeros(3, 5, dtype=torch.float64), torch.zeros(3, 5, dtype=torch.float64))
        dyn = GaussianSequence(torch.randn(3, 2, 2, dtype=torch.float64), torch.randn(3, 2, 2, dtype=torch.float64))
        recon, kl_s, kl_d = elbo_terms(x, x.clone(), static, dyn, dyn)
        assert float(recon) == 0.0 and float(kl_s) == 0.0 and float(kl_d) == 0.0

    def test_two_step_chain_oracle(self):
        x = t([[[0.0, 1.0], [2.0, 3.0]]])
        recon_in = t([[[0.5, 1.0], [2.0, 2.0]]])
        static = DiagonalGaussian(t([[1.0, -1.0]]), t([[0.0, math.log(2.0)]]))
        post = GaussianSequence(t([[[0.3], [-0.2]]]), t([[[0.1], [-0.4]]]))
        prior = GaussianSequence(t([[[0.0], [0.5]]]), t([[[0.0], [0.2]]]))

        def kl(mp, lp, mq, lq):
            return 0.5 * (lq - lp + (math.exp(lp) + (mp - mq) ** 2) / math.exp(lq) - 1)

        recon, kl_s, kl_d = elbo_terms(x, recon_in, static, post, prior)
        assert float(recon) == pytest.approx(0.25 + 1.0, abs=1e-12)
        assert float(kl_s) == pytest.approx(kl(1, 0, 0, 0) + kl(-1, math.log(2), 0, 0), abs=1e-9)
        assert float(kl_d) == pytest.approx(kl(0.3, 0.1, 0.0, 0.0) + kl(-0.2, -0.4, 0.5, 0.2), abs=1e-9)

    def test_batch_sum_convention(self):
        x = torch.rand(4, 2, 3, dtype=torch.float64)
        y = torch.rand(4, 2, 3, dtype=torch.float64)
        static = DiagonalGaussian(torch.zeros(4, 2), torch.zeros(4, 2))
        dyn = GaussianSequence(torch.zeros(4, 2, 1), torch.zeros(4, 2, 1))
        mean_recon = elbo_terms(x, y, static, dyn, dyn)[0]
        sum_recon = elbo_terms(x, y, static, dyn, dyn, mse_batch_sum=True)[0]
        assert float(sum_recon) == pytest.approx(4 * float(mean_recon), rel=1e-12)

    def test_shape_mismatch(self):
        static = DiagonalGaussian(torch.zeros(1, 2), torch.zeros(1, 2))
        dyn = GaussianSequence(torch.zeros(1, 2, 1), torch.zeros(1, 2, 1))
        with pytest.raises(ValueError):
            elbo_terms(torch.zeros(1, 2, 3), torch.zeros(1, 2, 4), static, dyn, dyn)


class TestInfoNCE:
    @pytest.mark.parametrize("m", [1, 8, 32])
    def test_symmetric_case(self, m):
        u = t([1.0, 2.0, -1.0])
        out = info_nce(u, u, u.expand(m, -1), 0.5)
        assert float(out) == pytest.approx(math.log(1 / (1 + m)), abs=1e-9)

    def test_symmetric_m32_value(self):
        u = t([0.3, 0.4])
        assert float(info_nce(u, u, u.expand(32, -1))) == pytest.approx(-3.496508, abs=1e-6)

    def test_direct_evaluation(self):
        u = t([1.0, 0.0])
        out = info_nce(u, u, (-u)[None], 0.5)
        assert float(out) == pytest.approx(math.log(1 / (1 + math.exp(-4))), abs=1e-12)
        assert float(out) == pytest.approx(-0.018150, abs=1e-6)

    def test_needs_negatives(self):
        with pytest.raises(ValueError):
            info_nce(t([1.0]), t([1.0]), torch.zeros(0, 1, dtype=torch.float64))

    def test_zero_vector(self):
        with pytest.raises(ValueError):
            info_nce(t([0.0, 0.0]), t([1.0, 0.0]), t([[1.0, 1.0]]))

    def test_batched_matches_loop(self):
        gen = torch.Generator().manual_seed(0)
        u = torch.randn(5, 4, generator=gen, dtype=torch.float64)
        vp = torch.randn(5, 4, generator=gen, dtype=torch.float64)
        vn = torch.randn(5, 7, 4, generator=gen, dtype=torch.float64)
        batched = info_nce(u, vp, vn)
        for i in range(5):
            assert float(batched[i]) == pytest.approx(float(info_nce(u[i], vp[i], vn[i])), abs=1e-12)

    def test_strictly_negative_on_random_instances(self):
        gen = torch.Generator().manual_seed(1)
        u = torch.randn(10_000, 6, generator=gen, dtype=torch.float64)
        vp = torch.randn(10_000, 6, generator=gen, dtype=torch.float64)
        vn = torch.randn(10_000, 4, 6, generator=gen, dtype=torch.float64)
        assert torch.all(info_nce(u, vp, vn) < 0)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 10_000), st.floats(0.01, 100.0))
    def test_monotone_in_negatives_and_scale_invariant(self, seed, alpha):
        gen = torch.Generator().manual_seed(seed)
        u, vp = torch.randn(2, 5, generator=gen, dtype=torch.float64)
        vn = torch.randn(6, 5, generator=gen, dtype=torch.float64)
        values = [float(info_nce(u, vp, vn[:k])) for k in range(1, 7)]
        assert all(b < a for a, b in zip(values, values[1:]))
        assert float(info_nce(alpha * u, vp, vn)) == pytest.approx(values[-1], abs=1e-12)


def mi_oracle(s_mean, s_lv, d_mean, d_lv, s_samp, d_samp, N):
    """Scalar MWS estimate for 1-D static and 1-D single-step dynamic latents."""
    n = len(s_mean)
    log_w = -math.log(n * N)
    s_sd, d_sd = np.exp(0.5 * np.asarray(s_lv)), np.exp(0.5 * np.asarray(d_lv))
    total = 0.0
    for i in range(n):
        ls = np.array([norm.logpdf(s_samp[i], s_mean[j], s_sd[j]) for j in range(n)])
        ld = np.array([norm.logpdf(d_samp[i], d_mean[j], d_sd[j]) for j in range(n)])
        total += logsumexp(ls + ld + log_w) - logsumexp(ls + log_w) - logsumexp(ld + log_w)
    return total / n


class TestMI:
    def test_n2_scalar_density_oracle(self):
        s_mean, s_lv = [0.2, -1.0], [0.1, -0.3]
        d_mean, d_lv = [1.5, 0.4], [-0.2, 0.5]
        s_samp, d_samp = [0.0, -0.7], [1.2, 0.9]
        static = DiagonalGaussian(t(s_mean)[:, None], t(s_lv)[:, None])
        dynamic = GaussianSequence(t(d_mean)[:, None, None], t(d_lv)[:, None, None])
        for N in (2, 50):
            est = mi_mws_static_dynamic(static, dynamic, t(s_samp)[:, None], t(d_samp)[:, None, None], N)
            assert float(est) == pytest.approx(mi_oracle(s_mean, s_lv, d_mean, d_lv, s_samp, d_samp, N), abs=1e-6)

    def test_identical_posteriors(self):
        n, N = 8, 100
        static = DiagonalGaussian(torch.zeros(n, 3, dtype=torch.float64), torch.zeros(n, 3, dtype=torch.float64))
        dynamic = GaussianSequence(torch.zeros(n, 2, 2, dtype=torch.float64), torch.zeros(n, 2, 2, dtype=torch.float64))
        s = torch.full((n, 3), 0.3, dtype=torch.float64)
        d = torch.full((n, 2, 2), -0.1, dtype=torch.float64)
        stratified = mi_mws_static_dynamic(static, dynamic, s, d, N, weighting="mss")
        assert float(stratified) == pytest.approx(0.0, abs=1e-12)
        flat = mi_mws_static_dynamic(static, dynamic, s, d, N, weighting="mws")
        # flat weights do not sum to one over a batch, which leaves a log N offset
        assert float(flat) == pytest.approx(math.log(N), abs=1e-12)

    def test_finite_on_random_batches(self):
        gen = torch.Generator().manual_seed(0)
        static = DiagonalGaussian(torch.randn(16, 8, generator=gen), torch.randn(16, 8, generator=gen))
        dynamic = GaussianSequence(torch.randn(16, 4, 2, generator=gen), torch.randn(16, 4, 2, generator=gen))
        est = mi_mws_static_dynamic(static, dynamic, static.sample(gen), dynamic.as_gaussian().sample(gen), 200)
        assert torch.isfinite(est)

    def test_batch_of_one_rejected(self):
        static = DiagonalGaussian(torch.zeros(1, 2), torch.zeros(1, 2))
        dynamic = GaussianSequence(torch.zeros(1, 2, 1), torch.zeros(1, 2, 1))
        with pytest.raises(ValueError):
            mi_mws_static_dynamic(static, dynamic, torch.zeros(1, 2), torch.zeros(1, 2, 1))


class TestTotal:
    def test_hand_set_parts(self):
        out = total_objective(LossWeights(1, 1, 1, 1, 1), 1, 1, 1, -1, -1, 1)
        assert float(out.total) == 6.0

    def test_zero_weights(self):
        out = total_objective(LossWeights(0, 0, 0, 0, 0), 3.0, 2.0, 1.0, -4.0, -5.0, 0.5)
        assert float(out.total) == 0.0

    def test_mug_row(self):
        w = REFERENCE_WEIGHTS["mug"]
        assert (w.lambda1, w.lambda2, w.lambda3, w.lambda4, w.lambda5) == (5, 9, 1, 0.5, 2.5)

    def test_recompute_bitwise(self):
        gen = torch.Generator().manual_seed(0)
        parts = torch.rand(6, generator=gen, dtype=torch.float64) * torch.tensor([100, 5, 5, -4, -4, 3])
        out = total_objective(LossWeights(10, 5, 1, 5, 1), *parts)
        assert torch.equal(out.recompute_total(), out.total)

    @pytest.mark.parametrize("bad", [float("nan"), float("inf")])
    def test_divergence_names_term(self, bad):
        with pytest.raises(TrainingDivergenceError) as info:
            total_objective(LossWeights(), 1.0, 1.0, bad, -1.0, -1.0, 0.0)
        assert info.value.term == "kl_dynamic"

    def test_negative_weight_rejected(self):
        with pytest.raises(ValueError):
            LossWeights(lambda2=-1)

"""
LDSeg - Diffusion Tests
Noise schedules, forward corruption, reverse kernels and step subsequences.
"""

import numpy as np
import pytest

from src.diffusion import (
    ddim_step,
    ddpm_step,
    evenly_spaced_subsequence,
    from_betas,
    make_cosine_schedule,
    make_linear_schedule,
    predict_m0,
    q_sample,
    q_step,
    respace,
    validate_subsequence,
)
from src.errors import DimensionError, OrderingError, RangeError


class TestSchedules:
    """Test schedule construction and derived quantities."""

    def test_linear_endpoints(self):
        """Test beta_1 = 1e-4 and beta_T = 0.02, with index 0 clean."""
        sched = make_linear_schedule(1000)
        assert sched.T == 1000
        assert sched.betas[0] == 0.0
        assert sched.alpha_bars[0] == 1.0
        assert sched.betas[1] == pytest.approx(1e-4)
        assert sched.betas[1000] == pytest.approx(0.02)

    def test_cosine_reaches_noise(self):
        """Test that the cosine schedule ends almost fully noised with clipped betas."""
        sched = make_cosine_schedule(1000)
        assert sched.alpha_bars[1000] < 1e-3
        assert np.all(sched.betas <= 0.999)
        assert np.all(np.diff(sched.alpha_bars) < 0)

    def test_two_step_alpha_bar(self):
        """Test betas (0.1, 0.3) give alpha_bar = [0.9, 0.63]."""
        sched = from_betas([0.1, 0.3])
        np.testing.assert_allclose(sched.alpha_bars[1:], [0.9, 0.63])

    def test_linear_betas_increase(self):
        """Test that linear betas rise strictly and alpha_bar falls strictly."""
        sched = make_linear_schedule(1000)
        assert np.all(np.diff(sched.betas[1:]) > 0)
        assert np.all(np.diff(sched.alpha_bars) < 0)

    def test_alpha_bar_is_cumulative_product(self):
        """Test alpha_bar_t = prod(1 - beta_s) for s <= t."""
        sched = make_linear_schedule(50, 1e-3, 0.05)
        np.testing.assert_allclose(sched.alpha_bars[1:], np.cumprod(1.0 - sched.betas[1:]))

    def test_arrays_are_read_only(self):
        """Test that schedule arrays cannot be mutated."""
        sched = make_linear_schedule(10)
        with pytest.raises(ValueError):
            sched.betas[1] = 0.5

    @pytest.mark.parametrize("args", [(0,), (10, 0.0, 0.02), (10, 0.03, 0.02), (10, 1e-4, 1.0)])
    def test_linear_rejects(self, args):
        """Test invalid step counts and beta ranges."""
        with pytest.raises(RangeError):
            make_linear_schedule(*args)

    def test_from_betas_rejects(self):
        """Test that betas outside (0, 1) or an empty list are rejected."""
        for betas in ([], [0.1, 1.0], [0.0, 0.1]):
            with pytest.raises(RangeError):
                from_betas(betas)

    def test_describe(self):
        """Test the checkpoint summary."""
        assert make_linear_schedule(20).describe()["T"] == 20
        assert make_cosine_schedule(20).describe()["kind"] == "cosine"


class TestForwardProcess:
    """Test the closed-form and single-step corruption."""

    def test_q_sample_endpoints(self):
        """Test that eps = 0 scales m0 by sqrt(alpha_bar_t)."""
        sched = make_linear_schedule(100)
        m0 = np.ones((2, 3))
        out = q_sample(m0, 40, np.zeros_like(m0), sched)
        np.testing.assert_allclose(out, np.sqrt(sched.alpha_bars[40]))

    def test_q_sample_scalar(self):
        """Test m0 = 1, eps = 2 at alpha_bar = 0.25 gives 0.5 + 2 sqrt(0.75)."""
        sched = from_betas([0.75])
        out = q_sample(np.array([1.0]), 1, np.array([2.0]), sched)
        assert out[0] == pytest.approx(2.23205, abs=1e-5)

    def test_q_sample_statistics(self):
        """Test mean sqrt(ab) m0 and variance 1 - ab within three standard errors."""
        sched = make_cosine_schedule(100)
        t, n = 30, 200000
        eps = np.random.default_rng(0).standard_normal(n)
        out = q_sample(np.full(n, 0.7), t, eps, sched)
        ab = sched.alpha_bars[t]
        var = 1.0 - ab
        assert abs(out.mean() - np.sqrt(ab) * 0.7) < 3 * np.sqrt(var / n)
        assert abs(out.var() - var) < 3 * var * np.sqrt(2.0 / n)

    def test_q_sample_per_sample_timesteps(self):
        """Test that a vector of timesteps applies one alpha_bar per batch row."""
        sched = make_linear_schedule(100)
        m0 = np.ones((2, 1, 2, 2))
        out = q_sample(m0, np.array([10, 90]), np.zeros_like(m0), sched)
        np.testing.assert_allclose(out[0], np.sqrt(sched.alpha_bars[10]))
        np.testing.assert_allclose(out[1], np.sqrt(sched.alpha_bars[90]))

    def test_q_step_composes_to_q_sample(self):
        """Test that iterated single steps match the closed form in distribution."""
        sched = make_linear_schedule(20, 0.01, 0.2)
        g = np.random.default_rng(1)
        n = 100000
        m = np.full(n, 1.5)
        for t in range(1, 6):
            m = q_step(m, t, g.standard_normal(n), sched)
        ab = sched.alpha_bars[5]
        assert abs(m.mean() - np.sqrt(ab) * 1.5) < 0.02
        assert abs(m.var() - (1.0 - ab)) < 0.02

    def test_shape_mismatch(self):
        """Test that eps must match the latent shape."""
        with pytest.raises(DimensionError):
            q_sample(np.zeros((2, 2)), 1, np.zeros(4), make_linear_schedule(5))

    @pytest.mark.parametrize("t", [0, 6])
    def test_timestep_range(self, t):
        """Test that t must lie in [1, T]."""
        with pytest.raises(RangeError):
            q_sample(np.zeros(3), t, np.zeros(3), make_linear_schedule(5))

    def test_dtype_preserved(self):
        """Test that float32 latents stay float32."""
        m0 = np.zeros(4, dtype=np.float32)
        assert q_sample(m0, 1, m0, make_linear_schedule(5)).dtype == np.float32


class TestReverseKernels:
    """Test the ancestral and deterministic reverse updates."""

    def test_ddim_exact_with_true_noise(self):
        """Test that the true eps takes m_t straight back to m0 at t_prev = 0."""
        sched = make_cosine_schedule(200)
        g = np.random.default_rng(2)
        m0, eps = g.normal(size=(2, 4, 3, 3)), g.normal(size=(2, 4, 3, 3))
        mt = q_sample(m0, 150, eps, sched)
        np.testing.assert_allclose(ddim_step(mt, eps, 150, 0, sched), m0, atol=1e-8)
        np.testing.assert_allclose(predict_m0(mt, eps, 150, sched), m0, atol=1e-8)

    def test_ddpm_full_chain_with_true_noise(self):
        """Test that T = 1000 ancestral steps without z recover m0 when eps is exact."""
        sched = make_linear_schedule(1000)
        g = np.random.default_rng(4)
        m0 = g.normal(size=(2, 1, 4, 4))
        m = q_sample(m0, 1000, g.normal(size=m0.shape), sched)
        for t in range(1000, 0, -1):
            ab = sched.alpha_bars[t]
            eps = (m - np.sqrt(ab) * m0) / np.sqrt(1.0 - ab)
            m = ddpm_step(m, eps, t, None, sched)
        assert np.abs(m - m0).max() < 1e-3

    def test_ddim_intermediate_lands_on_marginal(self):
        """Test that t -> t_prev with the true eps equals q_sample at t_prev."""
        sched = make_linear_schedule(100)
        g = np.random.default_rng(3)
        m0, eps = g.normal(size=6), g.normal(size=6)
        mt = q_sample(m0, 80, eps, sched)
        np.testing.assert_allclose(ddim_step(mt, eps, 80, 30, sched), q_sample(m0, 30, eps, sched), atol=1e-10)

    @pytest.mark.parametrize("t_prev", [5, 7])
    def test_ddim_ordering(self, t_prev):
        """Test that t_prev >= t is an ordering error."""
        with pytest.raises(OrderingError):
            ddim_step(np.zeros(2), np.zeros(2), 5, t_prev, make_linear_schedule(10))

    def test_ddpm_mean(self):
        """Test the posterior mean formula with z = None."""
        sched = make_linear_schedule(10, 0.01, 0.1)
        mt, eps = np.array([0.4, -1.0]), np.array([0.3, 0.2])
        t = 4
        expected = (mt - sched.betas[t] / np.sqrt(1 - sched.alpha_bars[t]) * eps) / np.sqrt(sched.alphas[t])
        np.testing.assert_allclose(ddpm_step(mt, eps, t, None, sched), expected)

    def test_ddpm_adds_scaled_noise(self):
        """Test that z enters with scale sqrt(beta_t)."""
        sched = make_linear_schedule(10, 0.01, 0.1)
        mt, eps, z = np.zeros(3), np.zeros(3), np.ones(3)
        np.testing.assert_allclose(ddpm_step(mt, eps, 3, z, sched), np.sqrt(sched.betas[3]))

    def test_ddpm_rejects_mismatched_noise(self):
        """Test that z must match the latent shape."""
        with pytest.raises(DimensionError):
            ddpm_step(np.zeros(3), np.zeros(3), 2, np.zeros(2), make_linear_schedule(5))


class TestSubsequences:
    """Test evenly spaced and user-supplied step lists."""

    def test_full_and_single(self):
        """Test K = T gives every step and K = 1 gives [1]."""
        assert evenly_spaced_subsequence(10, 10) == list(range(1, 11))
        assert evenly_spaced_subsequence(1, 1000) == [1]

    def test_ends_are_kept(self):
        """Test that the sequence starts at 1 and ends at T, strictly increasing."""
        steps = evenly_spaced_subsequence(10, 1000)
        assert steps[0] == 1 and steps[-1] == 1000
        assert len(steps) == 10
        assert all(b > a for a, b in zip(steps, steps[1:]))

    def test_ten_of_thousand(self):
        """Test the exact K = 10, T = 1000 step list."""
        assert evenly_spaced_subsequence(10, 1000) == [1, 112, 223, 334, 445, 556, 667, 778, 889, 1000]

    def test_rounding_half_away_from_zero(self):
        """Test linspace(1, 4, 3) = [1, 2.5, 4] rounds the middle up."""
        assert evenly_spaced_subsequence(3, 4) == [1, 3, 4]

    @pytest.mark.parametrize("K", [0, 11])
    def test_k_range(self, K):
        """Test that K outside [1, T] is rejected."""
        with pytest.raises(RangeError):
            evenly_spaced_subsequence(K, 10)

    def test_validate(self):
        """Test accepted and rejected explicit step lists."""
        assert validate_subsequence([1, 4, 9], 10) == [1, 4, 9]
        with pytest.raises(OrderingError):
            validate_subsequence([1, 4, 4], 10)
        with pytest.raises(RangeError):
            validate_subsequence([0, 4], 10)
        with pytest.raises(RangeError):
            validate_subsequence([], 10)

    def test_respace_full_is_identity(self):
        """Test that respacing over all steps returns the same schedule."""
        sched = make_linear_schedule(10)
        assert respace(sched, range(1, 11)) is sched

    def test_respace_keeps_marginals(self):
        """Test that alpha_bar of the respaced chain equals the original at kept steps."""
        sched = make_cosine_schedule(100)
        steps = evenly_spaced_subsequence(7, 100)
        short = respace(sched, steps)
        assert short.T == 7
        np.testing.assert_allclose(short.alpha_bars[1:], sched.alpha_bars[steps])
        assert list(short.timesteps[1:]) == steps

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers_starmec import random_solution, small_cfg
from starmec.channel import effective_channels, sample_channels
from starmec.metrics import (
    local_rate,
    local_rates,
    offload_rate,
    rate_breakdown,
    sinr,
    sinr_all,
)
from starmec.model import StarRisState, total_objective


class TestSinr:
    def test_single_user_no_interference(self):
        v = np.array([[1.0 + 0j]])
        g = np.array([[1.0 + 0j]])
        out = sinr_all(v, g, powers=np.array([1.0]), noise_w=1.0)
        assert out[0] == pytest.approx(1.0, rel=1e-15)

    @given(scale=st.complex_numbers(min_magnitude=1e-3, max_magnitude=1e3,
                                    allow_nan=False, allow_infinity=False))
    @settings(max_examples=40, deadline=None)
    def test_beamformer_scale_invariance(self, scale):
        cfg, channels, state, v, a = random_solution(9)
        g = effective_channels(channels, state)
        base = sinr_all(v, g, a * cfg.e_tilde, cfg.noise_power_w)
        v2 = np.array(v)
        v2[1] = scale * v2[1]
        new = sinr_all(v2, g, a * cfg.e_tilde, cfg.noise_power_w)
        np.testing.assert_allclose(new, base, rtol=1e-10)

    def test_two_user_scalar_cross_check(self):
        # Independent per-term complex arithmetic, no matrix shortcuts.
        rng = np.random.default_rng(5)
        v = rng.standard_normal((2, 3)) + 1j * rng.standard_normal((2, 3))
        g = rng.standard_normal((2, 3)) + 1j * rng.standard_normal((2, 3))
        p = np.array([2.0, 3.0])
        noise_w = 0.7
        fast = sinr_all(v, g, p, noise_w)
        for k in range(2):
            num = p[k] * abs(sum(v[k][n].conjugate() * g[k][n] for n in range(3))) ** 2
            other = 1 - k
            den = p[other] * abs(sum(v[k][n].conjugate() * g[other][n]
                                     for n in range(3))) ** 2
            den += noise_w * sum(abs(v[k][n]) ** 2 for n in range(3))
            assert fast[k] == pytest.approx(num / den, rel=1e-12)

    def test_full_solution_signature(self):
        cfg, channels, state, v, a = random_solution(2)
        val = sinr(0, v, channels, state, a, cfg)
        assert val >= 0

    def test_zero_beamformer_rejected(self):
        v = np.zeros((1, 2), dtype=complex)
        with pytest.raises(ValueError):
            sinr_all(v, np.ones((1, 2), dtype=complex), np.ones(1), 1.0)


class TestRates:
    def test_offload_zero(self):
        assert offload_rate(0.0, 1e6) == 0.0

    def test_offload_one_bit(self):
        assert offload_rate(1.0, 1e6) == pytest.approx(1e6, rel=1e-12)

    def test_offload_two_bits(self):
        assert offload_rate(3.0, 1e6) == pytest.approx(2e6, rel=1e-12)

    def test_offload_negative_rejected(self):
        with pytest.raises(ValueError):
            offload_rate(-0.5, 1e6)

    def test_local_rate_no_energy(self):
        assert local_rate(1.0, 10.0, 1.0, 1e-25, 200.0) == 0.0

    def test_local_rate_reference_point(self):
        # f = (10 / 1e-25)^(1/3) = 1e26^(1/3) ~ 4.6416e8 Hz; rate = f / 200.
        expected_freq = (1e26) ** (1.0 / 3.0)
        out = local_rate(0.0, 10.0, 1.0, 1e-25, 200.0)
        assert out == pytest.approx(expected_freq / 200.0, rel=1e-12)
        assert out == pytest.approx(2.3208e6, rel=1e-4)

    def test_local_rate_monotone_decreasing(self):
        grid = np.linspace(0.0, 0.999, 40)
        vals = [local_rate(a, 10.0, 1.0, 1e-25, 200.0) for a in grid]
        assert all(b < a for a, b in zip(vals, vals[1:]))

    def test_local_rate_domain(self):
        with pytest.raises(ValueError):
            local_rate(1.5, 10.0, 1.0, 1e-25, 200.0)


class TestObjectiveConsistency:
    def test_breakdown_matches_total(self):
        cfg, channels, state, v, a = random_solution(13)
        bd = rate_breakdown(v, channels, state, a, cfg)
        resum = float(np.sum(bd.offload_bps) + np.sum(bd.local_bps))
        assert total_objective(bd.offload_bps, bd.local_bps) == pytest.approx(
            resum, rel=1e-12)

    def test_all_local_when_no_offload_power(self):
        cfg = small_cfg()
        channels = sample_channels(cfg, 21)
        state = StarRisState.uniform_split(cfg.n_elements)
        v = np.ones((cfg.n_users, cfg.n_antennas), dtype=complex)
        a = np.zeros(cfg.n_users)
        bd = rate_breakdown(v, channels, state, a, cfg)
        np.testing.assert_array_equal(bd.offload_bps, 0.0)
        np.testing.assert_allclose(
            bd.local_bps, local_rates(np.zeros(cfg.n_users), cfg), rtol=1e-15)
        assert bd.objective == pytest.approx(float(np.sum(bd.local_bps)), rel=1e-15)

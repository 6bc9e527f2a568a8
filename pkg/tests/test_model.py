import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from starmec.model import (
    BeamformerSet,
    EnergyPartition,
    Protocol,
    StarRisState,
    SystemConfig,
    total_objective,
    transmit_power,
)


class TestTransmitPower:
    def test_zero_allocation(self):
        assert transmit_power(0.0, 10.0, 1.0) == 0.0

    def test_full_allocation(self):
        assert transmit_power(1.0, 10.0, 1.0) == 10.0

    def test_partial_allocation(self):
        assert transmit_power(0.25, 10.0, 1.0) == pytest.approx(2.5, rel=1e-15)

    def test_slot_normalization(self):
        assert transmit_power(0.5, 10.0, 2.0) == pytest.approx(2.5, rel=1e-15)

    @pytest.mark.parametrize("bad", [-0.1, 1.1, 2.0])
    def test_fraction_domain(self, bad):
        with pytest.raises(ValueError):
            transmit_power(bad, 10.0, 1.0)

    def test_positive_inputs(self):
        with pytest.raises(ValueError):
            transmit_power(0.5, -1.0, 1.0)


class TestTotalObjective:
    def test_all_zero(self):
        assert total_objective([0.0, 0.0], [0.0, 0.0]) == 0.0

    def test_single_user_sum(self):
        assert total_objective([1e6], [2e6]) == pytest.approx(3e6, rel=1e-15)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            total_objective([1.0, 2.0], [1.0])

    def test_matches_metric_recomputation(self):
        # K = 8 desk run re-evaluated from scratch per user.
        from helpers_starmec import random_solution
        from starmec.metrics import rate_breakdown

        cfg, channels, state, v, a = random_solution(3, None)
        bd = rate_breakdown(v, channels, state, a, cfg)
        manual = sum(float(x) for x in bd.offload_bps) \
            + sum(float(x) for x in bd.local_bps)
        assert total_objective(bd.offload_bps, bd.local_bps) == pytest.approx(
            manual, rel=1e-9)


class TestStarRisState:
    def test_coupling_rejected(self):
        with pytest.raises(ValueError):
            StarRisState(np.zeros(2), np.zeros(2),
                         np.array([0.5, 0.6]), np.array([0.5, 0.5]))

    def test_phase_wrapping(self):
        st_ = StarRisState(np.array([2 * np.pi + 0.25]), np.array([-0.5]),
                           np.array([0.5]), np.array([0.5]))
        assert st_.phases_t[0] == pytest.approx(0.25)
        assert st_.phases_r[0] == pytest.approx(2 * np.pi - 0.5)

    def test_amplitude_range(self):
        with pytest.raises(ValueError):
            StarRisState(np.zeros(1), np.zeros(1),
                         np.array([1.4]), np.array([-0.4]))

    def test_binary_residual(self):
        s = StarRisState.alternating_binary(4)
        assert s.binary_residual() == 0.0
        s2 = StarRisState.uniform_split(4)
        assert s2.binary_residual() == pytest.approx(0.5)
        assert not s2.is_binary_valid(1e-3)

    def test_energy_conserving_coefficients(self):
        s = StarRisState(np.zeros(3), np.zeros(3), np.full(3, 0.25), np.full(3, 0.75))
        total = np.abs(s.coeffs(0)) ** 2 + np.abs(s.coeffs(1)) ** 2
        np.testing.assert_allclose(total, 1.0, rtol=1e-12)

    def test_immutable(self):
        s = StarRisState.uniform_split(3)
        with pytest.raises(ValueError):
            s.amp_t[0] = 0.3

    @given(amp=st.lists(st.floats(0.0, 1.0), min_size=1, max_size=12))
    @settings(max_examples=40, deadline=None)
    def test_valid_couplings_accepted(self, amp):
        amp = np.asarray(amp)
        s = StarRisState(np.zeros(amp.size), np.zeros(amp.size), amp, 1.0 - amp)
        np.testing.assert_allclose(s.amp_t + s.amp_r, 1.0, atol=1e-12)


class TestSystemConfig:
    def test_defaults_match_simulation_setup(self):
        cfg = SystemConfig()
        assert cfg.bandwidth_hz == 1e6
        assert cfg.noise_power_w == pytest.approx(1e-12)  # -90 dBm
        assert cfg.energy_budgets_j == [10.0] * 8
        assert cfg.cycles_per_bit == [200.0] * 8
        assert cfg.capacitance_coeff == [1e-25] * 8
        assert cfg.slot_length_s == 1.0
        assert cfg.compute_duration_s == 1.0

    def test_user_counts(self):
        with pytest.raises(ValueError):
            SystemConfig(t_users=0)

    def test_rank_tol_bounds(self):
        with pytest.raises(ValueError):
            SystemConfig(rank_tol=0.5)
        assert SystemConfig(n_elements=30).eps_rank == pytest.approx(31e-4)

    def test_binary_tol_cap(self):
        with pytest.raises(ValueError):
            SystemConfig(binary_tol=0.5)

    def test_per_user_list_length(self):
        with pytest.raises(ValueError):
            SystemConfig(t_users=2, r_users=2, energy_budgets_j=[1.0, 2.0])

    def test_json_round_trip_exact(self):
        cfg = SystemConfig(n_antennas=7, n_elements=13, t_users=3, r_users=5,
                           bandwidth_hz=1.23456789e6,
                           noise_power_w=3.1e-13,
                           energy_budgets_j=list(np.linspace(1.0, 8.0, 8)),
                           protocol=Protocol.MS,
                           rank_tol=2.5e-3,
                           bcd_obj_tol=7.7e-5)
        back = SystemConfig.from_json(cfg.to_json())
        for name in ("n_antennas", "n_elements", "t_users", "r_users",
                     "bcd_max_iters", "dc_max_iters"):
            assert getattr(back, name) == getattr(cfg, name)
        assert back.protocol == cfg.protocol
        for name in ("bandwidth_hz", "noise_power_w", "slot_length_s",
                     "compute_duration_s", "rank_tol", "binary_tol", "bcd_obj_tol"):
            assert getattr(back, name) == getattr(cfg, name)  # json floats are exact
        assert back.energy_budgets_j == cfg.energy_budgets_j
        assert back.geometry == cfg.geometry

    @given(b=st.floats(1e3, 1e9), sig=st.floats(1e-15, 1e-6))
    @settings(max_examples=25, deadline=None)
    def test_json_real_fields_round_trip(self, b, sig):
        cfg = SystemConfig(bandwidth_hz=b, noise_power_w=sig)
        back = SystemConfig.from_json_dict(json.loads(cfg.to_json()))
        assert back.bandwidth_hz == pytest.approx(b, rel=1e-12)
        assert back.noise_power_w == pytest.approx(sig, rel=1e-12)


class TestOtherTypes:
    def test_energy_partition_bounds(self):
        with pytest.raises(ValueError):
            EnergyPartition(np.array([0.5, 1.2]))
        EnergyPartition(np.array([0.0, 1.0]))

    def test_beamformers_nonzero(self):
        with pytest.raises(ValueError):
            BeamformerSet(np.zeros((2, 3), dtype=complex))
        BeamformerSet(np.ones((2, 3), dtype=complex))

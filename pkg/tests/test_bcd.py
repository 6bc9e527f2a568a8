import numpy as np
import pytest

from helpers_starmec import small_cfg
from starmec import optimize, run_baseline, sample_channels
from starmec.bcd import Baseline, zero_forcing_beamformers
from starmec.channel import effective_channels
from starmec.model import Protocol


def monotone(trace, rel=1e-6):
    t = np.asarray(trace)
    return bool(np.all(np.diff(t) >= -rel * np.maximum(1.0, np.abs(t[:-1]))))


class TestOptimize:
    def test_deterministic(self):
        cfg = small_cfg()
        cs = sample_channels(cfg, 5)
        r1 = optimize(cs, cfg, 5)
        r2 = optimize(cs, cfg, 5)
        assert r1.objective_trace == r2.objective_trace
        np.testing.assert_array_equal(r1.per_user_offload_rate,
                                      r2.per_user_offload_rate)
        np.testing.assert_array_equal(r1.ris_state.amp_t, r2.ris_state.amp_t)
        np.testing.assert_array_equal(r1.energy.a, r2.energy.a)

    @pytest.mark.parametrize("protocol", [Protocol.ES, Protocol.MS])
    def test_monotone_trace(self, protocol):
        cfg = small_cfg(protocol=protocol)
        for seed in range(6):
            rep = optimize(sample_channels(cfg, seed), cfg, seed)
            assert monotone(rep.objective_trace)

    def test_final_beats_first_beamforming_update(self):
        cfg = small_cfg()
        rep = optimize(sample_channels(cfg, 8), cfg)
        assert rep.objective >= rep.objective_trace[0]

    def test_protocol_invariants_at_convergence(self):
        cfg = small_cfg(protocol=Protocol.MS)
        rep = optimize(sample_channels(cfg, 9), cfg)
        assert rep.binary_residual <= cfg.binary_tol
        assert rep.rank_residual <= cfg.eps_rank + 1e-9
        np.testing.assert_allclose(rep.ris_state.amp_t + rep.ris_state.amp_r,
                                   1.0, atol=1e-8)

    def test_es_dominates_ms_from_warm_start(self):
        cfg = small_cfg()
        for seed in range(5):
            cs = sample_channels(cfg, seed + 40)
            ms = optimize(cs, cfg.with_(protocol=Protocol.MS), seed)
            es = optimize(cs, cfg, seed, warm_start=(ms.ris_state, ms.energy.a))
            assert es.objective >= ms.objective * (1 - 1e-9)

    def test_report_fields(self):
        cfg = small_cfg()
        rep = optimize(sample_channels(cfg, 3), cfg)
        assert rep.scheme == "es"
        assert rep.iterations >= 1
        assert rep.wall_time_s > 0
        assert len(rep.per_user_offload_rate) == cfg.n_users


class TestBaselines:
    def test_equal_energy_fixes_partition(self):
        cfg = small_cfg()
        rep = run_baseline(Baseline.EQUAL_ENERGY, sample_channels(cfg, 1), cfg)
        np.testing.assert_allclose(rep.energy.a, 0.5, atol=1e-12)

    def test_zero_forcing_orthogonality(self):
        cfg = small_cfg(n_antennas=6)  # N >= K
        cs = sample_channels(cfg, 2)
        rep = run_baseline(Baseline.ZERO_FORCING, cs, cfg)
        g = effective_channels(cs, rep.ris_state)
        cross = rep.beamformers.v.conj() @ g.T
        off_diag = cross - np.diag(np.diagonal(cross))
        assert np.max(np.abs(off_diag)) <= 1e-8
        assert "zf_least_squares_fallback" not in rep.flags

    def test_zero_forcing_fallback_flagged(self):
        cfg = small_cfg(n_antennas=3)  # N < K
        rep = run_baseline(Baseline.ZERO_FORCING, sample_channels(cfg, 3), cfg)
        assert "zf_least_squares_fallback" in rep.flags

    def test_zero_forcing_helper(self):
        rng = np.random.default_rng(0)
        g = rng.standard_normal((3, 5)) + 1j * rng.standard_normal((3, 5))
        v, fallback = zero_forcing_beamformers(g)
        assert not fallback
        np.testing.assert_allclose(np.abs(v.conj() @ g.T - np.diag(np.diagonal(
            v.conj() @ g.T))), 0.0, atol=1e-10)

    def test_conventional_pattern_frozen(self):
        cfg = small_cfg()
        rep = run_baseline(Baseline.CONVENTIONAL_RIS, sample_channels(cfg, 4), cfg)
        m = cfg.n_elements
        np.testing.assert_array_equal(rep.ris_state.amp_r[: m // 2], 1.0)
        np.testing.assert_array_equal(rep.ris_state.amp_t[m // 2:], 1.0)

    def test_conventional_needs_even_elements(self):
        cfg = small_cfg(n_elements=5)
        with pytest.raises(ValueError):
            run_baseline(Baseline.CONVENTIONAL_RIS, sample_channels(cfg, 5), cfg)

    def test_equal_time_structure(self):
        cfg = small_cfg()
        rep = run_baseline(Baseline.EQUAL_TIME, sample_channels(cfg, 6), cfg)
        assert "equal_time_halves" in rep.flags
        assert set(rep.details) == {"t_half", "r_half"}
        np.testing.assert_array_equal(rep.details["t_half"].amp_t, 1.0)
        np.testing.assert_array_equal(rep.details["r_half"].amp_r, 1.0)
        assert monotone(rep.objective_trace)

    def test_monotone_traces_where_blocks_ascend(self):
        cfg = small_cfg()
        cs = sample_channels(cfg, 7)
        for kind in (Baseline.CONVENTIONAL_RIS, Baseline.EQUAL_ENERGY):
            rep = run_baseline(kind, cs, cfg)
            assert monotone(rep.objective_trace)

    def test_joint_solver_beats_baselines_on_most_seeds(self):
        cfg = small_cfg()
        wins = {b: 0 for b in Baseline}
        n = 10
        for seed in range(n):
            cs = sample_channels(cfg, seed + 60)
            es = optimize(cs, cfg, seed)
            for kind in Baseline:
                rep = run_baseline(kind, cs, cfg)
                wins[kind] += es.objective >= rep.objective * (1 - 1e-9)
        for kind, count in wins.items():
            assert count >= 0.8 * n, f"{kind}: {count}/{n}"

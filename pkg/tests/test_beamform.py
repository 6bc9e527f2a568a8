import numpy as np
import pytest
from scipy.linalg import eigh

from helpers_starmec import random_solution, small_cfg
from starmec.beamform import (
    QuadraticPair,
    achieved_sinr,
    mmse_beamformers,
    solve_all_beamformers,
    solve_beamformer,
)
from starmec.channel import effective_channels, sample_channels
from starmec.metrics import sinr_all
from starmec.model import StarRisState


def _random_pair(rng, n, p=2.0, noise=0.5):
    g = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    others = rng.standard_normal((3, n)) + 1j * rng.standard_normal((3, n))
    a = p * np.outer(g, g.conj())
    b = noise * np.eye(n) + sum(np.outer(x, x.conj()) for x in others)
    return QuadraticPair(a_mat=a, b_mat=b), g


class TestSolveBeamformer:
    def test_matched_filter_without_interference(self):
        rng = np.random.default_rng(0)
        g = rng.standard_normal(4) + 1j * rng.standard_normal(4)
        pair = QuadraticPair(a_mat=np.outer(g, g.conj()), b_mat=np.eye(4))
        v = solve_beamformer(pair)
        alignment = abs(np.vdot(v, g)) / (np.linalg.norm(v) * np.linalg.norm(g))
        assert alignment == pytest.approx(1.0, rel=1e-12)

    def test_matches_dense_generalized_eigensolver(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            pair, g = _random_pair(rng, 4)
            v = solve_beamformer(pair)
            quot = np.real(v.conj() @ pair.a_mat @ v) / np.real(v.conj() @ pair.b_mat @ v)
            evals = eigh(pair.a_mat, pair.b_mat, eigvals_only=True)
            assert quot == pytest.approx(evals[-1], rel=1e-9)

    def test_local_optimality_probe(self):
        rng = np.random.default_rng(2)
        pair, g = _random_pair(rng, 4)
        v = solve_beamformer(pair)

        def quotient(w):
            return np.real(w.conj() @ pair.a_mat @ w) / np.real(w.conj() @ pair.b_mat @ w)

        base = quotient(v)
        for _ in range(1000):
            d = rng.standard_normal(4) + 1j * rng.standard_normal(4)
            w = v + 0.05 * d / np.linalg.norm(d)
            assert quotient(w) <= base * (1 + 1e-12)

    def test_unit_norm_output(self):
        rng = np.random.default_rng(3)
        pair, _ = _random_pair(rng, 5)
        assert np.linalg.norm(solve_beamformer(pair)) == pytest.approx(1.0, rel=1e-12)

    def test_zero_numerator_rejected(self):
        with pytest.raises(ValueError):
            solve_beamformer(QuadraticPair(a_mat=np.zeros((3, 3)), b_mat=np.eye(3)))

    def test_shape_validation(self):
        with pytest.raises(ValueError):
            QuadraticPair(a_mat=np.eye(3), b_mat=np.eye(4))


class TestSolveAll:
    def test_scale_consistency(self):
        cfg, channels, state, _, a = random_solution(17)
        g = effective_channels(channels, state)
        p = a * cfg.e_tilde
        v1 = mmse_beamformers(g, p, cfg.noise_power_w)
        v2 = mmse_beamformers(g, 3.0 * p, cfg.noise_power_w)
        # direction preserved per user when the power profile is rescaled and
        # the noise rescaled accordingly
        v3 = mmse_beamformers(g, 3.0 * p, 3.0 * cfg.noise_power_w)
        overlaps = np.abs(np.einsum("kn,kn->k", v1.conj(), v3))
        np.testing.assert_array_less(1 - 1e-9, overlaps)
        assert v2.shape == v1.shape

    def test_zero_power_user_deterministic(self):
        cfg, channels, state, _, a = random_solution(19)
        a = np.array(a)
        a[0] = 0.0
        out1 = solve_all_beamformers(channels, state, a, cfg)
        out2 = solve_all_beamformers(channels, state, a, cfg)
        np.testing.assert_array_equal(out1.v, out2.v)
        g = effective_channels(channels, state)
        gamma = sinr_all(out1.v, g, a * cfg.e_tilde, cfg.noise_power_w)
        assert gamma[0] == 0.0

    def test_achieved_sinr_matches_closed_form(self):
        cfg, channels, state, _, a = random_solution(23)
        g = effective_channels(channels, state)
        p = a * cfg.e_tilde
        v = mmse_beamformers(g, p, cfg.noise_power_w)
        direct = sinr_all(v, g, p, cfg.noise_power_w)
        closed = achieved_sinr(g, p, cfg.noise_power_w)
        np.testing.assert_allclose(direct, closed, rtol=1e-9)

    def test_block_never_decreases_objective(self):
        cfg, channels, state, v_rand, a = random_solution(29)
        rng = np.random.default_rng(0)
        v_old = rng.standard_normal(v_rand.shape) + 1j * rng.standard_normal(v_rand.shape)
        g = effective_channels(channels, state)
        p = a * cfg.e_tilde
        before = sinr_all(v_old, g, p, cfg.noise_power_w)
        after = sinr_all(mmse_beamformers(g, p, cfg.noise_power_w), g, p,
                         cfg.noise_power_w)
        assert np.all(after >= before - 1e-12)

    def test_grid_oracle_two_antennas(self):
        # Exhaustive 5-degree mesh over the complex unit sphere in C^2 (any
        # unit vector up to an irrelevant global phase), locally refined at
        # the winner: the SINR peak sits at an interference null and is sharp,
        # so the coarse mesh alone undershoots by design.
        cfg = small_cfg(n_antennas=2, t_users=1, r_users=1, n_elements=2)
        channels = sample_channels(cfg, 31)
        state = StarRisState.uniform_split(2)
        g = effective_channels(channels, state)
        p = np.array([0.6, 0.4]) * cfg.e_tilde
        best = achieved_sinr(g, p, cfg.noise_power_w)

        def sweep(k, alphas, betas):
            top, arg = -1.0, None
            for alpha in alphas:
                for beta in betas:
                    v = np.array([np.cos(alpha), np.sin(alpha) * np.exp(1j * beta)])
                    val = sinr_all(np.stack([v, v]), g, p, cfg.noise_power_w)[k]
                    if val > top:
                        top, arg = val, (alpha, beta)
            return top, arg

        step = np.deg2rad(5.0)
        for k in range(2):
            top, (alpha, beta) = sweep(
                k, np.arange(0, np.pi / 2 + step / 2, step),
                np.arange(0, 2 * np.pi, step))
            assert best[k] >= top - 1e-9
            width = step
            for _ in range(6):  # local refinement: 5deg -> ~0.005deg
                alphas = alpha + np.linspace(-width, width, 9)
                betas = beta + np.linspace(-width, width, 9)
                top, (alpha, beta) = sweep(k, np.clip(alphas, 0, np.pi / 2), betas)
                width /= 4.0
            assert best[k] == pytest.approx(top, rel=2e-2)

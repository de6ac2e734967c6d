import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rispass import autodiff as ad
from rispass.beamform import zf_matrix
from rispass.channel import effective_channel
from rispass.objective import (
    Beamformer,
    RISConfig,
    Solution,
    energy_efficiency,
    loss_ee,
    loss_sr,
    power_t,
    rates_t,
    sum_rate,
    sum_rate_t,
    user_rate,
    user_rates,
)
from rispass.scenario import PAPlacement, SystemParams, fixed_pa_placement, sample_scenario


def dense_rates(Z, W, noise):
    """SINR-by-loops reference: R_k = log2(1 + |h_k w_k|^2 / (sum_{j != k} |h_k w_j|^2 + noise))."""
    K = Z.shape[0]
    out = []
    for k in range(K):
        sig = abs(Z[k] @ W[:, k]) ** 2
        interf = sum(abs(Z[k] @ W[:, j]) ** 2 for j in range(K) if j != k)
        out.append(math.log2(1 + sig / (interf + noise)))
    return np.array(out)


def random_solution(p, seed):
    rng = np.random.default_rng(seed)
    x = np.sort(rng.uniform(0, 10, (p.n_waveguides, p.n_pas)), axis=1)
    x[:, 1:] = np.maximum(x[:, 1:], x[:, :-1] + 0.1)
    W = rng.normal(size=(p.n_waveguides, p.n_users)) + 1j * rng.normal(size=(p.n_waveguides, p.n_users))
    W *= 2.0 / np.linalg.norm(W)
    return Solution(PAPlacement(np.minimum(x, 10)), RISConfig(rng.uniform(0, 6.28, p.n_ris)), Beamformer(W))


class TestRates:
    def test_scalar_snr(self):
        # |h| = 1e-4, w = sqrt(10), noise 1e-9 -> SINR = 100
        r = rates_t(np.array([[[1e-4]]]), np.array([[[math.sqrt(10)]]]), 1e-9).data
        assert r[0, 0] == pytest.approx(math.log2(101))
        assert r[0, 0] == pytest.approx(6.6582, abs=1e-4)

    def test_zero_beam_zero_rate(self):
        Z = np.array([[[1e-4, 2e-4], [3e-4, -1e-4]]], complex)
        W = np.array([[[1.0, 0.0], [0.5, 0.0]]], complex)
        assert rates_t(Z, W, 1e-9).data[0, 1] == 0.0

    def test_zf_removes_interference(self):
        rng = np.random.default_rng(1)
        Z = (rng.normal(size=(2, 3)) + 1j * rng.normal(size=(2, 3))) * 1e-4
        W = zf_matrix(Z)
        Y = Z @ W
        assert abs(Y[0, 1]) ** 2 + abs(Y[1, 0]) ** 2 < 1e-10

    @pytest.mark.parametrize("seed", range(4))
    def test_matches_dense_loops(self, seed):
        p = SystemParams(n_waveguides=3, n_pas=2, n_users=3, n_ris=4)
        sc = sample_scenario(p, seed)
        sol = random_solution(p, seed)
        Z = effective_channel(sol.placement, sol.ris.phases, sc, p)
        expected = dense_rates(Z, sol.beam.W, p.noise_power)
        np.testing.assert_allclose(user_rates(sol, sc, p), expected, rtol=1e-10)
        assert sum_rate(sol, sc, p) == pytest.approx(expected.sum(), rel=1e-10)
        assert user_rate(2, sol, sc, p) == pytest.approx(expected[2], rel=1e-10)

    def test_single_user_sum_equals_user_rate(self):
        p = SystemParams(n_waveguides=2, n_pas=1, n_users=1, n_ris=2)
        sc = sample_scenario(p, 0)
        sol = random_solution(p, 0)
        assert sum_rate(sol, sc, p) == user_rate(0, sol, sc, p)

    def test_zero_power_duplicate_user_changes_nothing(self):
        rng = np.random.default_rng(3)
        Z = rng.normal(size=(2, 3)) + 1j * rng.normal(size=(2, 3))
        W = rng.normal(size=(3, 2)) + 1j * rng.normal(size=(3, 2))
        Z3 = np.vstack([Z, Z[:1]])
        W3 = np.hstack([W, np.zeros((3, 1))])
        a = sum_rate_t(Z[None], W[None], 0.1).data[0]
        b = sum_rate_t(Z3[None], W3[None], 0.1).data[0]
        assert b == pytest.approx(a, rel=1e-12)

    def test_rates_ignore_ris_when_absent(self):
        p = SystemParams.desk(n_ris=0)
        sc = sample_scenario(p, 0)
        sol = Solution(fixed_pa_placement(p), RISConfig(np.zeros(0)), Beamformer(np.eye(2)))
        assert np.isfinite(sum_rate(sol, sc, p))


class TestEnergyEfficiency:
    def test_ratio(self):
        p = SystemParams.desk()
        sc = sample_scenario(p, 0)
        sol = random_solution(p, 0)
        ee = energy_efficiency(sol, sc, p)
        assert ee == pytest.approx(sum_rate(sol, sc, p) / (4.0 + 5.0))

    def test_zero_beams(self):
        p = SystemParams.desk()
        sol = Solution(fixed_pa_placement(p), RISConfig(np.zeros(8)), Beamformer(np.zeros((2, 2))))
        assert energy_efficiency(sol, sample_scenario(p, 0), p) == 0.0

    def test_scaled_beams_denominator(self):
        p = SystemParams.desk()
        sc = sample_scenario(p, 2)
        sol = random_solution(p, 2)
        c = 0.5
        small = Solution(sol.placement, sol.ris, Beamformer(c * sol.beam.W))
        assert small.beam.total_power == pytest.approx(c**2 * sol.beam.total_power)
        assert energy_efficiency(small, sc, p) == pytest.approx(sum_rate(small, sc, p) / (c**2 * 4.0 + 5.0))


class TestLosses:
    def test_listed_values(self):
        assert loss_sr([2.0]) == 0.5
        assert loss_sr([1.0, 1.0]) == 1.0
        # SR 2, power 5, P_C 5 -> 10 / 2
        assert loss_ee([2.0], [5.0], 5.0) == 5.0
        assert loss_ee([2.0, 2.0], [5.0, 5.0], 5.0) == 5.0

    def test_reciprocal_of_ee(self):
        sr, pw = np.array([3.0, 7.0]), np.array([1.0, 9.0])
        assert loss_ee(sr, pw, 5.0) == pytest.approx(np.mean((pw + 5) / sr))

    def test_floor_keeps_loss_finite(self):
        assert loss_sr([0.0]) == pytest.approx(1e8)

    def test_tensor_and_array_agree(self):
        sr = np.array([1.5, 4.0])
        pw = np.array([2.0, 3.0])
        assert float(loss_sr(ad.const(sr)).data) == loss_sr(sr)
        assert float(loss_ee(ad.const(sr), ad.const(pw), 5.0).data) == pytest.approx(loss_ee(sr, pw, 5.0))

    def test_power_tensor(self):
        W = np.array([[[1 + 1j, 0], [0, 2j]]])
        assert power_t(W).data[0] == pytest.approx(6.0)


class TestSolution:
    def test_phase_wrapping(self):
        r = RISConfig([-0.5, 2 * np.pi, 7.0, -1e-20])
        assert np.all((r.phases >= 0) & (r.phases < 2 * np.pi))
        np.testing.assert_allclose(r.coefficients, np.exp(1j * np.array([-0.5, 0, 7.0, 0])), atol=1e-12)

    def test_violations(self):
        p = SystemParams.desk()
        ok = Solution(fixed_pa_placement(p), RISConfig(np.zeros(8)), Beamformer(np.eye(2)))
        assert ok.is_feasible(p)
        loud = Solution(ok.placement, ok.ris, Beamformer(3 * np.eye(2)))
        assert any("power" in v for v in loud.violations(p))
        short = Solution(ok.placement, RISConfig(np.zeros(3)), ok.beam)
        assert not short.is_feasible(p)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.01, 50.0), min_size=1, max_size=6), st.integers(0, 5), st.floats(0.01, 5.0))
def test_loss_sr_strictly_decreasing(srs, idx, bump):
    idx = idx % len(srs)
    better = list(srs)
    better[idx] += bump
    assert loss_sr(better) < loss_sr(srs)

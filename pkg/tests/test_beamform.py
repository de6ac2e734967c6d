import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rispass import autodiff as ad
from rispass.beamform import (
    HzmParams,
    IllConditionedWarning,
    assemble_hzm,
    dinkelbach_update,
    hzm_direction,
    hzm_t,
    mrt_directions,
    refine_beams,
    rzf_closed_form,
    rzf_t,
    sum_rate_value,
    zf_matrix,
    zf_t,
)
from rispass.objective import Beamformer, sum_rate_t
from rispass.scenario import SystemParams

from numgrad import fd_grad, rel_err

DESK = SystemParams.desk()


def channels(K, N, seed, scale=1e-4):
    rng = np.random.default_rng(seed)
    return (rng.normal(size=(K, N)) + 1j * rng.normal(size=(K, N))) * scale


def angle_deg(a, b):
    c = abs(np.vdot(a, b)) / (np.linalg.norm(a) * np.linalg.norm(b))
    return math.degrees(math.acos(min(1.0, c)))


class TestZeroForcing:
    def test_diagonal_by_hand(self):
        np.testing.assert_allclose(zf_matrix(np.array([[1, 0], [0, 2]])), [[1, 0], [0, 0.5]])

    def test_single_user_pseudo_inverse(self):
        h = channels(1, 4, 0)
        np.testing.assert_allclose(zf_matrix(h)[:, 0], h[0].conj() / np.linalg.norm(h) ** 2)

    @pytest.mark.parametrize("seed", range(5))
    def test_residual(self, seed):
        Z = channels(3, 5, seed, scale=1.0)
        assert np.linalg.norm(Z @ zf_matrix(Z) - np.eye(3)) <= 1e-8

    def test_ill_conditioned_warns_and_stays_finite(self):
        h = channels(1, 3, 0)
        Z = np.vstack([h, h * (1 + 1e-14)])
        with pytest.warns(IllConditionedWarning):
            U = zf_matrix(Z)
        assert np.all(np.isfinite(U))

    def test_well_conditioned_silent(self):
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            zf_matrix(channels(2, 4, 1))

    def test_batched_matches_single(self):
        Z = np.stack([channels(2, 3, s) for s in range(3)])
        U = zf_t(ad.const(Z)).data
        for b in range(3):
            np.testing.assert_allclose(U[b], zf_matrix(Z[b]), rtol=1e-10)


class TestHybrid:
    def test_endpoints(self):
        Z = channels(3, 4, 2)
        U = zf_matrix(Z)
        for k in range(3):
            np.testing.assert_allclose(hzm_direction(k, 1.0, Z), U[:, k] / np.linalg.norm(U[:, k]))
            np.testing.assert_allclose(hzm_direction(k, 0.0, Z), Z[k].conj() / np.linalg.norm(Z[k]))

    @pytest.mark.parametrize("alpha", [0.0, 0.3, 1.0])
    def test_single_user_is_mrt(self, alpha):
        h = channels(1, 3, 4)
        np.testing.assert_allclose(hzm_direction(0, alpha, h), h[0].conj() / np.linalg.norm(h), atol=1e-12)

    def test_assembled_power(self):
        Z = channels(2, 3, 5)
        W = assemble_hzm(HzmParams([0.2, 0.9], [3.0, 0.0]), Z).W
        np.testing.assert_allclose(np.linalg.norm(W, axis=0) ** 2, [3.0, 0.0], atol=1e-12)

    def test_uniform_power_pure_zf(self):
        Z = channels(2, 3, 6)
        W = assemble_hzm(HzmParams([1.0, 1.0], [5.0, 5.0]), Z).W
        U = zf_matrix(Z)
        np.testing.assert_allclose(W, U / np.linalg.norm(U, axis=0) * math.sqrt(5.0))

    def test_batched_matches_single(self):
        Z = channels(2, 3, 7)
        W = hzm_t(np.array([[0.25, 0.75]]), np.array([[2.0, 4.0]]), Z[None]).data[0]
        np.testing.assert_allclose(W, assemble_hzm(HzmParams([0.25, 0.75], [2.0, 4.0]), Z).W, rtol=1e-12)

    def test_gradient(self):
        Z = channels(2, 3, 8)

        def f(a):
            return ad.sum(sum_rate_t(Z[None], hzm_t(a, np.array([[3.0, 4.0]]), Z[None]), 1e-9))

        a0 = np.array([[0.3, 0.6]])
        t = ad.tensor(a0, requires_grad=True)
        ad.backward(f(t))
        assert rel_err(t.grad, fd_grad(lambda v: float(f(ad.const(v)).data), a0)) < 1e-6


class TestRegularizedZF:
    def test_single_user_is_mrt(self):
        h = channels(1, 4, 3)
        W = rzf_closed_form(h, DESK.replace(n_waveguides=4, n_users=1)).W
        np.testing.assert_allclose(W[:, 0] / np.linalg.norm(W), h[0].conj() / np.linalg.norm(h), atol=1e-10)
        assert np.linalg.norm(W) ** 2 == pytest.approx(10.0)

    def test_zero_regularization_weights_give_mrt(self):
        Z = channels(2, 3, 1)
        W = rzf_closed_form(Z, DESK, p=[5.0, 5.0], lam=[0.0, 0.0]).W
        np.testing.assert_allclose(W, mrt_directions(Z) * math.sqrt(5.0), atol=1e-12)

    def test_low_noise_approaches_zf(self):
        Z = channels(2, 2, 2)
        p = DESK.replace(noise_power_dbm=-150)
        W = rzf_closed_form(Z, p).W
        U = zf_matrix(Z)
        for k in range(2):
            assert angle_deg(W[:, k], U[:, k]) < 1.0

    def test_batched_agrees(self):
        Z = channels(2, 3, 4)
        W = rzf_t(Z[None], np.array([[1.0, 2.0]]), np.array([[3.0, 0.5]]), 1e-9).data[0]
        np.testing.assert_allclose(W, rzf_closed_form(Z, DESK, p=[1.0, 2.0], lam=[3.0, 0.5]).W, rtol=1e-12)


class TestRefine:
    def test_dinkelbach_update(self):
        assert dinkelbach_update(10.0, 10.0) == 1.0

    def test_analytic_gradient(self):
        from rispass.beamform import _sum_rate_and_grad

        Z = channels(3, 3, 5)
        W = channels(3, 3, 6, scale=1.0)
        _, G = _sum_rate_and_grad(Z, W, 1e-9)
        num = fd_grad(lambda v: sum_rate_value(Z, v, 1e-9), W, h=1e-7)
        assert rel_err(G, num) < 1e-5

    def test_single_user_converges_to_full_power_mrt(self):
        h = channels(1, 4, 9)
        p = SystemParams(n_waveguides=4, n_users=1)
        rng = np.random.default_rng(0)
        init = (rng.normal(size=(4, 1)) + 1j * rng.normal(size=(4, 1))) * 0.1
        res = refine_beams(h, p, "sr", init=init, budget=500)
        w = res.beam.W[:, 0]
        assert np.linalg.norm(w) ** 2 == pytest.approx(10.0, rel=1e-9)
        assert angle_deg(w, h[0].conj()) < 0.5

    def test_optimum_is_a_fixed_point(self):
        h = channels(1, 3, 1)
        p = SystemParams(n_waveguides=3, n_users=1)
        opt = (h[0].conj() / np.linalg.norm(h) * math.sqrt(10))[:, None]
        res = refine_beams(h, p, "sr", init=opt, budget=500)
        assert res.value == pytest.approx(res.initial_value, abs=1e-9)
        np.testing.assert_allclose(res.beam.W, opt, atol=1e-6)

    @pytest.mark.parametrize("objective", ["sr", "ee"])
    @pytest.mark.parametrize("seed", range(4))
    def test_never_worse_than_init(self, objective, seed):
        Z = channels(2, 2, seed)
        res = refine_beams(Z, DESK, objective, budget=200)
        assert res.value >= res.initial_value - 1e-9
        assert res.beam.total_power <= DESK.power_budget + 1e-9

    def test_ee_spends_less_than_full_power_when_circuit_cost_is_small(self):
        Z = channels(2, 2, 3)
        p = DESK.replace(circuit_power=0.01)
        res = refine_beams(Z, p, "ee", budget=500)
        assert res.beam.total_power < p.power_budget
        W0 = rzf_closed_form(Z, p).W
        ee0 = sum_rate_value(Z, W0, p.noise_power) / (np.sum(abs(W0) ** 2) + 0.01)
        assert res.value > ee0

    def test_zero_budget_returns_init(self):
        Z = channels(2, 2, 1)
        init = rzf_closed_form(Z, DESK)
        res = refine_beams(Z, DESK, "sr", init=init, budget=0)
        np.testing.assert_array_equal(res.beam.W, init.W)

    def test_rejects_unknown_objective(self):
        with pytest.raises(ValueError):
            refine_beams(channels(2, 2, 0), DESK, "max-min")


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 3))
def test_refined_beams_stay_in_power_ball(seed, K):
    Z = channels(K, 3, seed)
    p = SystemParams(n_waveguides=3, n_users=K)
    rng = np.random.default_rng(seed)
    init = Beamformer((rng.normal(size=(3, K)) + 1j * rng.normal(size=(3, K))) * 5)
    res = refine_beams(Z, p, "sr", init=init, budget=30)
    assert res.beam.total_power <= p.power_budget * (1 + 1e-12)
    assert res.value >= res.initial_value - 1e-9

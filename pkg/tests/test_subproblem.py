import numpy as np
import pytest

from nfrsma import (build_instance, solve_inner, verify_kkt, ConvexInstance,
                    build_surrogate_raw, eval_surrogate, NumericError)
from conftest import synthetic_channels, random_precoder


def make_instance(rng, K=2, n=6, rho=None, common=True, power=1.0, delta=0.05):
    ch = synthetic_channels(rng, K=K, N=n)
    S = K + 1 if common else K
    Pt = random_precoder(rng, n, S, power=0.8 * power)
    target = random_precoder(rng, n, S, power=power) if rho is not None else None
    inst = build_instance(ch.h_hat, Pt, delta=delta, eps_eff2=ch.eps ** 2,
                          sigma2=1.0, common_stream=common, target=target,
                          rho=rho, power_cap=power)
    return ch, Pt, inst


class TestSolveInner:
    def test_feasibility_and_kkt_contract(self, rng):
        for _ in range(10):
            _, _, inst = make_instance(rng, rho=100.0)
            sol = solve_inner(inst)
            assert sol.feasibility_residual <= 1e-7 * max(1.0, inst.power_cap)
            assert sol.kkt_residual <= 1e-6

    def test_tightness_at_optimum(self, rng):
        # min_k (c_k + f_private_k) equals the returned max-min value
        _, _, inst = make_instance(rng, rho=None)
        sol = solve_inner(inst)
        vals = [sol.c[k] + eval_surrogate(inst.private[k], sol.X)
                for k in range(inst.K)]
        assert abs(min(vals) - sol.R_hat) < 1e-6

    def test_all_zero_channels_zero_rate(self):
        n, K = 4, 2
        h = np.zeros((K, n), complex)
        Pt = np.zeros((n, K + 1), complex)
        inst = build_instance(h, Pt, delta=0.05, eps_eff2=0.0, sigma2=1.0,
                              common_stream=True, power_cap=1.0)
        sol = solve_inner(inst)
        assert abs(sol.R_hat) < 1e-7
        assert np.all(np.abs(sol.c) < 1e-7)

    def test_power_constraint_active_scaling(self, rng):
        _, _, inst = make_instance(rng, rho=None)
        sol = solve_inner(inst)
        assert np.linalg.norm(sol.X) ** 2 <= inst.power_cap + 1e-7

    def test_monotone_in_power_cap(self, rng):
        ch, Pt, _ = make_instance(rng, rho=None)
        prev = -np.inf
        for cap in [0.5, 1.0, 2.0, 4.0]:
            inst = build_instance(ch.h_hat, Pt, delta=0.05, eps_eff2=ch.eps ** 2,
                                  sigma2=1.0, common_stream=True, power_cap=cap)
            sol = solve_inner(inst)
            assert sol.R_hat >= prev - 1e-7
            prev = sol.R_hat

    def test_penalized_value_monotone_in_weight(self, rng):
        # fixed surrogates: larger 1/rho can only reduce the optimum
        ch, Pt, _ = make_instance(rng)
        target = random_precoder(rng, 6, 3, power=1.0)
        prev = np.inf
        for rho in [1e4, 100.0, 1.0, 0.01]:
            inst = build_instance(ch.h_hat, Pt, delta=0.05, eps_eff2=ch.eps ** 2,
                                  sigma2=1.0, common_stream=True, target=target,
                                  rho=rho, power_cap=1.0)
            sol = solve_inner(inst)
            assert sol.obj_value <= prev + 1e-6
            prev = sol.obj_value

    def test_single_user_grid_oracle(self, rng):
        # K=1, penalty off: maximize c + f_p s.t. c <= f_c over the power disc;
        # both precoder columns restricted to span{h} by optimality, so a polar
        # grid over the two magnitudes is an exhaustive oracle
        for trial in range(3):
            ch = synthetic_channels(rng, K=1, N=5)
            h = ch.h_hat[0]
            nh = np.linalg.norm(h)
            Pt = np.stack([0.5 * h / nh, 0.6 * h / nh], axis=1)
            inst = build_instance(ch.h_hat, Pt, delta=0.05, eps_eff2=ch.eps ** 2,
                                  sigma2=1.0, common_stream=True, power_cap=1.0)
            sol = solve_inner(inst)

            s_c, s_p = inst.common[0], inst.private[0]
            best = -np.inf
            for r in np.linspace(0.05, 1.0, 60):
                for phi in np.linspace(0, np.pi / 2, 721):
                    t0, t1 = np.sqrt(r) * np.cos(phi), np.sqrt(r) * np.sin(phi)
                    P = np.stack([t0 * h / nh, t1 * h / nh], axis=1)
                    fc = eval_surrogate(s_c, P)
                    fp = eval_surrogate(s_p, P)
                    best = max(best, max(fc, 0.0) + fp)
            assert sol.R_hat >= best - 1e-3
            assert sol.R_hat <= best + 1e-2  # grid resolution bound

    def test_sdma_variant_has_no_split(self, rng):
        _, _, inst = make_instance(rng, common=False, rho=100.0)
        sol = solve_inner(inst)
        assert np.all(sol.c == 0.0)
        assert sol.feasibility_residual <= 1e-7

    def test_reduced_equals_full_when_identity(self, rng):
        # with F = I the reduced digital problem IS the full problem
        ch, Pt, _ = make_instance(rng, K=2, n=6)
        full = build_instance(ch.h_hat, Pt, delta=0.05, eps_eff2=ch.eps ** 2,
                              sigma2=1.0, common_stream=True, power_cap=1.0)
        reduced = build_instance(ch.h_hat, Pt, delta=0.05,
                                 eps_eff2=1 * ch.eps ** 2,  # M = 1
                                 sigma2=1.0, common_stream=True, power_cap=1.0 / 1)
        a, b = solve_inner(full), solve_inner(reduced)
        assert abs(a.R_hat - b.R_hat) < 1e-5


class TestVerifyKkt:
    def test_returned_solution_verifies(self, rng):
        _, _, inst = make_instance(rng, rho=50.0)
        sol = solve_inner(inst)
        rep = verify_kkt(inst, sol)
        assert rep.feasibility <= 1e-7
        assert rep.stationarity <= 1e-6
        assert rep.complementarity <= 1e-6

    def test_power_violation_detected(self, rng):
        _, _, inst = make_instance(rng, rho=None)
        sol = solve_inner(inst)
        sol.X = 1.01 * sol.X * np.sqrt(inst.power_cap) / np.linalg.norm(sol.X)
        rep = verify_kkt(inst, sol)
        assert rep.feasibility > 0.0

    def test_negative_split_detected(self, rng):
        _, _, inst = make_instance(rng, rho=None)
        sol = solve_inner(inst)
        sol.c = sol.c.copy()
        sol.c[0] = -0.05
        rep = verify_kkt(inst, sol)
        assert rep.feasibility >= 0.05 - 1e-9


class TestInstanceValidation:
    def test_penalty_needs_both_fields(self, rng):
        ch, Pt, inst = make_instance(rng)
        with pytest.raises(ValueError):
            ConvexInstance(private=inst.private, common=inst.common,
                           power_cap=1.0, target=Pt, rho=None)

    def test_shape_mismatch_rejected(self, rng):
        ch = synthetic_channels(rng, K=2, N=6)
        bad = random_precoder(rng, 6, 2)  # needs K+1 = 3 columns
        with pytest.raises(ValueError):
            build_instance(ch.h_hat, bad, delta=0.05, eps_eff2=0.0, sigma2=1.0,
                           common_stream=True, power_cap=1.0)

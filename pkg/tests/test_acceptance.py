"""Acceptance suite: one test per release criterion, each printing a
PASS/FAIL line with its measured statistic (run with `pytest -s` to see
them inline)."""

import time

import numpy as np
import pytest

from nfrsma import (SystemConfig, ChannelSet, sample_channels, channel_rng,
                    build_surrogate, eval_surrogate, check_gradient_consistency,
                    update_analog, update_digital, materialize, run_pbcd,
                    run_single, run_full_digital, run_far_field, run_twostage,
                    balanced_allocation, swap_optimize, min_array_gain,
                    COMMON, PRIVATE, dbm_to_watt)
from nfrsma.twostage import _blocks_from_phi
from conftest import synthetic_channels, random_precoder
from test_twostage import exhaustive_best_gain


def _report(name, ok, detail):
    print(f"\n[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    assert ok, f"{name}: {detail}"


class TestAcceptance:
    def test_01_surrogate_minorization(self):
        # 1000 random expansion/candidate pairs at N=8, K=2: the quadratic
        # never exceeds the frozen-noise rate (1e-9), tight at expansion (1e-8)
        t0 = time.time()
        rng = np.random.default_rng(101)
        worst_gap = -np.inf
        worst_tight = 0.0
        for _ in range(1000):
            ch = synthetic_channels(rng, K=2, N=8)
            Pt = random_precoder(rng, 8, 3)
            P = random_precoder(rng, 8, 3)
            k = int(rng.integers(2))
            stream = COMMON if rng.uniform() < 0.5 else PRIVATE
            s = build_surrogate(ch, Pt, 0.05, k, stream, 1.0)
            worst_tight = max(worst_tight, abs(eval_surrogate(s, Pt) - s.frozen_rate(Pt)))
            worst_gap = max(worst_gap, eval_surrogate(s, P) - s.frozen_rate(P))
        took = time.time() - t0
        ok = worst_gap <= 1e-9 and worst_tight <= 1e-8 and took < 10.0
        _report("1 surrogate minorization",
                ok, f"max overshoot {worst_gap:.2e}, tightness {worst_tight:.2e}, {took:.1f}s")

    def test_02_gradient_consistency(self):
        t0 = time.time()
        rng = np.random.default_rng(102)
        worst = 0.0
        for _ in range(100):
            ch = synthetic_channels(rng, K=2, N=6)
            Pt = random_precoder(rng, 6, 3)
            k = int(rng.integers(2))
            stream = COMMON if rng.uniform() < 0.5 else PRIVATE
            worst = max(worst, check_gradient_consistency(ch, Pt, 0.05, k, stream, 1.0,
                                                          step=1e-6))
        took = time.time() - t0
        ok = worst <= 1e-5 and took < 30.0
        _report("2 gradient consistency", ok, f"max relative error {worst:.2e}, {took:.1f}s")

    def test_03_analog_closed_form_vs_grid(self):
        # 1e4 random complex scalars: closed-form phase alignment beats a
        # 3600-point grid within 1e-6
        rng = np.random.default_rng(103)
        psi = rng.standard_normal(10000) + 1j * rng.standard_normal(10000)
        grid = np.exp(1j * np.linspace(0, 2 * np.pi, 3600, endpoint=False))
        worst = np.inf
        for lo in range(0, 10000, 1000):
            chunk = psi[lo:lo + 1000]
            best_grid = np.max(np.real(chunk[:, None].conj() * grid[None, :]), axis=1)
            worst = min(worst, np.min(np.abs(chunk) - best_grid))
        ok = worst >= -1e-6
        _report("3 analog phase optimality", ok,
                f"min (closed-form - grid max) = {worst:.2e}")

    def test_04_digital_least_squares(self):
        rng = np.random.default_rng(104)
        worst_orth = 0.0
        worst_formula = 0.0
        for _ in range(1000):
            L = int(rng.choice([2, 4]))
            M = int(rng.choice([2, 4]))
            S = int(rng.integers(2, 5))
            F = np.exp(1j * rng.uniform(0, 2 * np.pi, (L, M)))
            P = random_precoder(rng, L * M, S)
            W = update_digital(P, F)
            resid = P - materialize(F, W)
            for l in range(L):
                worst_orth = max(worst_orth, float(np.max(np.abs(
                    F[l].conj() @ resid[l * M:(l + 1) * M, :]))))
            closed = np.stack([F[l].conj() @ P[l * M:(l + 1) * M, :] / M
                               for l in range(L)])
            worst_formula = max(worst_formula, float(np.max(np.abs(W - closed))))
        ok = worst_orth <= 1e-9 and worst_formula <= 1e-10
        _report("4 digital least squares", ok,
                f"orthogonality {worst_orth:.2e}, closed-form match {worst_formula:.2e}")

    def test_05_inner_monotonicity_and_penalty(self):
        # 20 seeds at N=32, L=4, K=3: monotone objective within each penalty
        # level (1e-7 slack), final coupling gap below 1e-6 * P_th, < 10 min
        t0 = time.time()
        worst_drop = 0.0
        worst_viol = 0.0
        for trial in range(20):
            cfg = SystemConfig(N=32, L=4, K=3, seed=500)
            ch = sample_channels(cfg, channel_rng(500, trial))
            _, _, rep = run_pbcd(ch, cfg, rng=channel_rng(500, trial, 1))
            assert rep.status == "converged", f"trial {trial}: {rep.status}"
            obj = np.array(rep.objective_trace)
            i = 0
            for n in rep.inner_iters:
                seg = obj[i:i + n]
                if len(seg) > 1:
                    worst_drop = max(worst_drop, float(np.max(-np.diff(seg))))
                i += n
            worst_viol = max(worst_viol, rep.penalty_violation_trace[-1])
        took = time.time() - t0
        ok = worst_drop <= 1e-7 and worst_viol <= 1e-6 * 0.1 and took < 600.0
        _report("5 monotonicity + penalty convergence", ok,
                f"worst drop {worst_drop:.2e}, worst violation {worst_viol:.2e}, {took:.0f}s")

    def test_06_swap_heuristic(self):
        # strict improvement at every accepted swap; exhaustive-optimum
        # attainment reported over 100 seeds (expected >= 70%)
        hits = 0
        for trial in range(100):
            cfg = SystemConfig(N=16, L=4, K=2, seed=600)
            ch = sample_channels(cfg, channel_rng(600, trial))
            phi0 = balanced_allocation(4, 2, channel_rng(601, trial))
            phi, F, trace = swap_optimize(ch, phi0)
            assert all(b > a for a, b in zip(trace, trace[1:])), "non-strict swap"
            best = exhaustive_best_gain(ch, 4, 2)
            assert trace[-1] <= best + 1e-9
            if trace[-1] >= best - 1e-9:
                hits += 1
        ok = hits >= 70
        _report("6 swap heuristic", ok,
                f"strict increase everywhere; optimum attained {hits}/100")

    def test_07_rsma_dominance(self):
        # 50 paired seeds at the reference impairment point: the rate-split
        # scheme never falls below user-specific streams; the latter is
        # bit-invariant to the SIC factor
        t0 = time.time()
        dominated = 0
        sdma_invariant = 0
        for trial in range(50):
            cfg = SystemConfig(N=32, L=4, K=3, seed=700, eps_factor=0.005, delta=0.05)
            row_r, _ = run_single("RSMA-SHB", cfg, 700, 0, trial)
            row_s, _ = run_single("SDMA-SHB", cfg, 700, 0, trial)
            cfg_d = cfg.with_updates(delta=0.5)
            row_s2, _ = run_single("SDMA-SHB", cfg_d, 700, 0, trial)
            if row_r.maxmin_rate_bps_hz >= row_s.maxmin_rate_bps_hz - 1e-6:
                dominated += 1
            if row_s.maxmin_rate_bps_hz == row_s2.maxmin_rate_bps_hz:
                sdma_invariant += 1
        ok = dominated == 50 and sdma_invariant == 50
        _report("7 rate-split dominance", ok,
                f"dominance {dominated}/50, SIC-invariant {sdma_invariant}/50, "
                f"{time.time() - t0:.0f}s")

    def test_08_hierarchy_and_trends(self):
        # paired means over 50 seeds: full digital >= hybrid >= far-field
        # matching (the absolute figures from the reference study are not
        # reproducible without its seeds; ordering and trends stand in)
        t0 = time.time()
        r_fd, r_shb, r_far = [], [], []
        for trial in range(50):
            cfg = SystemConfig(N=32, L=4, K=3, seed=800)
            row_fd, _ = run_single("RSMA-FD", cfg, 800, 0, trial)
            row_sh, _ = run_single("RSMA-SHB", cfg, 800, 0, trial)
            row_fa, _ = run_single("RSMA-SHB-far", cfg, 800, 0, trial)
            r_fd.append(row_fd.maxmin_rate_bps_hz)
            r_shb.append(row_sh.maxmin_rate_bps_hz)
            r_far.append(row_fa.maxmin_rate_bps_hz)
        r_fd, r_shb, r_far = map(np.array, (r_fd, r_shb, r_far))
        hier = np.mean(r_fd) >= np.mean(r_shb) >= np.mean(r_far)

        # near-field matching beats far-field matching on >= 90% of seeds
        # when users at 10-20 m actually see spherical wavefronts, which
        # needs the reference aperture (Rayleigh distance ~80 m at N=128)
        near_wins = 0
        for trial in range(50):
            cfg = SystemConfig(N=128, L=8, K=4, seed=802)
            ch = sample_channels(cfg, channel_rng(802, trial))
            _, _, rep_near = run_twostage(ch, cfg, rng=channel_rng(802, trial, 1))
            _, rep_far = run_far_field(ch, cfg, rng=channel_rng(802, trial, 1))
            near_wins += rep_near.final_rate >= rep_far.final_rate - 1e-9

        # SDMA saturates at high power under perfect CSI/SIC while the
        # rate-split pipeline keeps scaling; sharpest in the overloaded
        # regime (more users than RF chains), where user-specific streams
        # cannot separate the users at any power
        gains = {}
        for common in (True, False):
            r25, r30 = [], []
            for trial in range(3):
                for pdbm, acc in [(25.0, r25), (30.0, r30)]:
                    cfg = SystemConfig(N=16, L=2, K=3, seed=801,
                                       P_th=dbm_to_watt(pdbm),
                                       eps_factor=0.0, delta=0.0, max_inner=12)
                    ch = sample_channels(cfg, channel_rng(801, 0, trial, 0))
                    _, _, rep = run_pbcd(ch, cfg, rng=channel_rng(801, 0, trial, 1),
                                         common_stream=common)
                    acc.append(rep.final_rate)
            gains[common] = float(np.mean(r30) - np.mean(r25))
        saturation = gains[False] < gains[True]

        ok = hier and near_wins >= 45 and saturation
        _report("8 hierarchy + trends", ok,
                f"means FD={np.mean(r_fd):.3f} >= SHB={np.mean(r_shb):.3f} >= "
                f"far={np.mean(r_far):.3f}; near wins {near_wins}/50; "
                f"power gains RSMA={gains[True]:.3f} > SDMA={gains[False]:.3f}; "
                f"{time.time() - t0:.0f}s")

    def test_09_twostage_vs_pbcd(self):
        # paired means over 20 seeds: gap <= 0.15 bits/s/Hz at the full-chain
        # limit, non-increasing in the RF-chain count
        t0 = time.time()
        gaps = {}
        for L in (4, 8, 16, 32):
            g = []
            for trial in range(20):
                cfg = SystemConfig(N=32, L=L, K=3, seed=900)
                ch = sample_channels(cfg, channel_rng(900, L, trial))
                _, _, rep_p = run_pbcd(ch, cfg, rng=channel_rng(900, L, trial, 1))
                _, _, rep_t = run_twostage(ch, cfg, rng=channel_rng(900, L, trial, 1))
                g.append(rep_p.final_rate - rep_t.final_rate)
            gaps[L] = float(np.mean(g))
        seq = [gaps[L] for L in (4, 8, 16, 32)]
        ok = gaps[32] <= 0.15 and all(b <= a + 1e-9 for a, b in zip(seq, seq[1:]))
        _report("9 two-stage vs penalty BCD", ok,
                f"mean gaps by L {dict((L, round(v, 4)) for L, v in gaps.items())}, "
                f"{time.time() - t0:.0f}s")

    def test_10_single_user_brute_force(self):
        # K=1: both precoder columns restricted to span{h} and swept over a
        # polar grid on the power circle is an exhaustive oracle
        t0 = time.time()
        worst = 0.0
        for trial in range(10):
            cfg = SystemConfig(N=32, L=4, K=1, seed=1000)
            ch = sample_channels(cfg, channel_rng(1000, trial))
            _, _, rep = run_pbcd(ch, cfg, rng=channel_rng(1000, trial, 1))
            h = ch.h_hat[0]
            nh2 = float(np.linalg.norm(h) ** 2)
            eps2 = float(ch.eps[0] ** 2)
            sig2 = cfg.sigma2_vec()[0]
            dl = cfg.delta_vec()[0]
            best = 0.0
            for phi in np.linspace(0, np.pi / 2, 4001):
                t0_, t1_ = np.sqrt(cfg.P_th) * np.cos(phi), np.sqrt(cfg.P_th) * np.sin(phi)
                noise = eps2 * (t0_ ** 2 + t1_ ** 2) + sig2
                rc = np.log2(1 + t0_ ** 2 * nh2 / (t1_ ** 2 * nh2 + noise))
                rp = np.log2(1 + t1_ ** 2 * nh2 / (dl * t0_ ** 2 * nh2 + noise))
                best = max(best, rc + rp)
            worst = max(worst, abs(best - rep.final_rate))
        ok = worst <= 1e-2
        _report("10 single-user brute force", ok,
                f"max |grid - solver| = {worst:.2e} bits/s/Hz, {time.time() - t0:.0f}s")

"""Baselines, Monte-Carlo sweeps, configuration files, and the CLI.

Schemes
-------
RSMA-SHB       penalty block-descent on the sub-connected hybrid architecture
RSMA-SHB-Low   two-stage design (swap-refined analog stage, digital-only SCA)
RSMA-FD        full-digital upper-bound reference (direct SCA on the precoder)
SDMA-SHB       same hybrid pipeline with the common stream removed
RSMA-SHB-far   two-stage design whose analog stage matches planar-wave responses

Every (sweep value, trial) derives its own RNG stream from the base seed, so
reruns are bit-identical (wall times aside) and schemes are compared on
paired channel draws.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import dataclasses
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .model import (SystemConfig, ChannelSet, sample_channels, channel_rng,
                    near_field_response, far_field_response, dbm_to_watt)
from .rates import HybridBeamfocuser
from .pbcd import run_pbcd, run_sca, SolverReport, _per_user_totals, materialize
from .twostage import run_twostage
from .subproblem import NumericError, reset_solver_state

SCHEMES = ("RSMA-SHB", "RSMA-SHB-Low", "RSMA-FD", "SDMA-SHB", "RSMA-SHB-far")

CSV_COLUMNS = ["scheme", "sweep_name", "sweep_value", "trial", "seed",
               "maxmin_rate_bps_hz", "iters_outer", "iters_inner_total",
               "penalty_violation", "wall_ms", "status"]

SWEEPABLE = ("eps_factor", "delta", "L", "K", "P_th")


def run_sdma(ch: ChannelSet, cfg: SystemConfig,
             rng: np.random.Generator | None = None
             ) -> tuple[HybridBeamfocuser, SolverReport]:
    """Hybrid pipeline with user-specific streams only (common column zero).

    The rate split is identically zero and the SIC factor never enters, so
    the output is invariant to delta by construction.
    """
    hb, _, report = run_pbcd(ch, cfg, rng=rng, common_stream=False)
    return hb, report


def run_full_digital(ch: ChannelSet, cfg: SystemConfig
                     ) -> tuple[np.ndarray, SolverReport]:
    """Direct SCA over the unconstrained-architecture precoder.

    One RF chain per antenna: no analog stage, no penalty loop. Serves as
    the performance reference the hybrid schemes are measured against.
    """
    t0 = time.perf_counter()
    reset_solver_state()
    K = ch.K
    mf = ch.h_hat / np.linalg.norm(ch.h_hat, axis=1, keepdims=True)
    c0 = mf.sum(axis=0)
    c0 /= np.linalg.norm(c0)
    P0 = np.stack([c0] + [mf[k] for k in range(K)], axis=1) * np.sqrt(cfg.P_th / (K + 1))
    report = SolverReport()
    status = "max_iters"
    P = P0
    c = np.zeros(K)
    try:
        res = run_sca(ch.h_hat, P0, delta=cfg.delta_vec(), eps_eff2=ch.eps ** 2,
                      sigma2=cfg.sigma2_vec(), common_stream=True, target=None,
                      rho=None, power_cap=cfg.P_th, tol=cfg.tol_outer,
                      max_iters=cfg.max_stage2)
        P, c = res.sol.X, res.sol.c
        report.n_solves = res.n_solves
        report.objective_trace = list(res.trace)
        status = "converged" if res.converged else "max_iters"
    except NumericError:
        status = "numeric_error"
    report.status = status
    report.outer_iters = 1
    report.inner_iters = [report.n_solves]
    report.penalty_violation_trace = [0.0]
    totals, c_adj, _, _ = _per_user_totals(ch.h_hat, P, c, cfg.delta_vec(),
                                           ch.eps ** 2, cfg.sigma2_vec(), True)
    report.final_rate = float(totals.min())
    report.per_user_rates = totals
    report.final_c = c_adj
    report.true_rate_trace = list(report.objective_trace)
    report.wall_time = time.perf_counter() - t0
    return P, report


def run_far_field(ch: ChannelSet, cfg: SystemConfig,
                  rng: np.random.Generator | None = None
                  ) -> tuple[HybridBeamfocuser, SolverReport]:
    """Two-stage design with the analog stage matched to planar wavefronts.

    Stage 1 ignores user distances (response vectors from angles only);
    stage 2 still optimizes against the true estimated channels, so the
    result quantifies the cost of ignoring wavefront curvature.
    """
    far = np.stack([far_field_response(cfg, th) for th in ch.geometry.theta])
    hb, _, report = run_twostage(ch, cfg, rng=rng, stage1_responses=far)
    return hb, report


def _dispatch(scheme: str, ch: ChannelSet, cfg: SystemConfig,
              rng_factory) -> SolverReport:
    """Run one scheme. rng_factory() yields a fresh copy of the run's
    derived stream, so every candidate start inside a scheme consumes an
    identical, reproducible sequence."""
    if scheme == "RSMA-SHB":
        # best of two starts: common stream enabled, and suppressed (the
        # suppressed run is always feasible for the rate-split design, so
        # the scheme never falls below its user-specific-stream restriction)
        _, _, rep_a = run_pbcd(ch, cfg, rng=rng_factory())
        _, _, rep_b = run_pbcd(ch, cfg, rng=rng_factory(), common_stream=False)
        report = rep_a if rep_a.final_rate >= rep_b.final_rate else rep_b
    elif scheme == "RSMA-SHB-Low":
        _, _, report = run_twostage(ch, cfg, rng=rng_factory())
    elif scheme == "RSMA-FD":
        _, report = run_full_digital(ch, cfg)
    elif scheme == "SDMA-SHB":
        _, report = run_sdma(ch, cfg, rng=rng_factory())
    elif scheme == "RSMA-SHB-far":
        _, report = run_far_field(ch, cfg, rng=rng_factory())
    else:
        raise ValueError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")
    return report


@dataclass
class ExperimentSpec:
    """One sweep: schemes x sweep values x Monte-Carlo trials."""

    schemes: list
    sweep_name: str
    sweep_values: list
    trials: int
    base: SystemConfig
    seed: int = 0

    def __post_init__(self):
        for s in self.schemes:
            if s not in SCHEMES:
                raise ValueError(f"unknown scheme {s!r}")
        if self.sweep_name not in SWEEPABLE:
            raise ValueError(f"sweep variable must be one of {SWEEPABLE}")
        if self.trials < 0:
            raise ValueError("trials must be nonnegative")
        for v in self.sweep_values:
            self.base.with_updates(**{self.sweep_name: _coerce_sweep(self.sweep_name, v)})


def _coerce_sweep(name: str, value):
    return int(value) if name in ("L", "K") else float(value)


@dataclass
class ResultRow:
    """One solver run inside a sweep."""

    scheme: str
    sweep_name: str
    sweep_value: float
    trial: int
    seed: int
    maxmin_rate_bps_hz: float
    per_user_rates: list
    iters_outer: int
    iters_inner_total: int
    penalty_violation: float
    wall_ms: float
    status: str

    def csv_record(self) -> list:
        return [self.scheme, self.sweep_name, self.sweep_value, self.trial,
                self.seed, f"{self.maxmin_rate_bps_hz:.12g}", self.iters_outer,
                self.iters_inner_total, f"{self.penalty_violation:.6g}",
                f"{self.wall_ms:.1f}", self.status]


def run_single(scheme: str, cfg: SystemConfig, seed: int, value_index: int,
               trial: int, sweep_name: str = "none", sweep_value: float = 0.0
               ) -> tuple[ResultRow, dict]:
    """One seeded run: sample channels, dispatch, package the row + trace."""
    ch_rng = channel_rng(seed, value_index, trial, 0)
    ch = sample_channels(cfg, ch_rng)
    rng_factory = lambda: channel_rng(seed, value_index, trial, 1)
    try:
        report = _dispatch(scheme, ch, cfg, rng_factory)
        status = report.status
    except Exception as exc:  # row carries the failure; the sweep continues
        report = SolverReport(status=f"error:{type(exc).__name__}")
        status = report.status
    viol = report.penalty_violation_trace[-1] if report.penalty_violation_trace else 0.0
    row = ResultRow(
        scheme=scheme, sweep_name=sweep_name, sweep_value=sweep_value,
        trial=trial, seed=seed, maxmin_rate_bps_hz=report.final_rate,
        per_user_rates=[] if report.per_user_rates is None
        else [float(v) for v in report.per_user_rates],
        iters_outer=report.outer_iters,
        iters_inner_total=int(sum(report.inner_iters)),
        penalty_violation=float(viol),
        wall_ms=1000.0 * report.wall_time,
        status=status,
    )
    return row, report.to_dict()


def _run_task(args):
    scheme, cfg, seed, vi, trial, name, value = args
    row, trace = run_single(scheme, cfg, seed, vi, trial, name, value)
    return (scheme, vi, trial), row, trace


def run_experiment(spec: ExperimentSpec, out_dir, threads: int = 1) -> list:
    """Execute the sweep and persist results.csv / summary.csv / manifest.json
    plus one trace JSON per run. Rows are written in canonical order
    (scheme, value index, trial) regardless of scheduling."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "traces").mkdir(exist_ok=True)

    tasks = []
    for si, scheme in enumerate(spec.schemes):
        for vi, value in enumerate(spec.sweep_values):
            cfg_v = spec.base.with_updates(
                **{spec.sweep_name: _coerce_sweep(spec.sweep_name, value)})
            for trial in range(spec.trials):
                tasks.append((scheme, cfg_v, spec.seed, vi, trial,
                              spec.sweep_name, float(value)))

    results = {}
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            for key, row, trace in pool.map(_run_task, tasks):
                results[key] = (row, trace)
    else:
        for t in tasks:
            key, row, trace = _run_task(t)
            results[key] = (row, trace)

    rows = []
    for si, scheme in enumerate(spec.schemes):
        for vi, value in enumerate(spec.sweep_values):
            for trial in range(spec.trials):
                row, trace = results[(scheme, vi, trial)]
                rows.append(row)
                tname = f"{scheme}_v{vi}_t{trial}.json"
                with open(out / "traces" / tname, "w") as f:
                    json.dump(trace, f, indent=1)

    with open(out / "results.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(CSV_COLUMNS)
        for row in rows:
            w.writerow(row.csv_record())

    with open(out / "summary.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["scheme", "sweep_name", "sweep_value", "n",
                    "mean_rate", "std_rate"])
        for scheme in spec.schemes:
            for value in spec.sweep_values:
                vals = [r.maxmin_rate_bps_hz for r in rows
                        if r.scheme == scheme and r.sweep_value == float(value)
                        and not r.status.startswith("error")]
                if vals:
                    w.writerow([scheme, spec.sweep_name, value, len(vals),
                                f"{np.mean(vals):.12g}", f"{np.std(vals):.12g}"])
                else:
                    w.writerow([scheme, spec.sweep_name, value, 0, "", ""])

    manifest = {
        "version": __version__,
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"),
        "seed": spec.seed,
        "trials": spec.trials,
        "schemes": list(spec.schemes),
        "sweep_name": spec.sweep_name,
        "sweep_values": [float(v) for v in spec.sweep_values],
        "base_config": {f.name: _jsonable(getattr(spec.base, f.name))
                        for f in dataclasses.fields(spec.base)},
    }
    with open(out / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=1)
    return rows


def _jsonable(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, tuple):
        return list(v)
    return v


# ---------------------------------------------------------------------------
# configuration files


_FIELD_BY_LOWER = {f.name.lower(): f.name for f in dataclasses.fields(SystemConfig)}


def _parse_scalar(text: str):
    text = text.strip()
    if "," in text:
        return tuple(float(t) for t in text.split(",") if t.strip())
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            continue
    if text.lower() in ("true", "false"):
        return text.lower() == "true"
    return text


def parse_config(path) -> tuple[SystemConfig, dict | None]:
    """Read an INI file with [system], [solver], and optional [sweep] sections.

    [system] and [solver] keys map onto SystemConfig fields (case
    insensitive). Keys ending in `_dbm` are converted to linear watts at
    parse time, e.g. p_th_dbm = 20 -> P_th = 0.1.
    """
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    read = cp.read(path)
    if not read:
        raise FileNotFoundError(path)
    kw = {}
    for section in ("system", "solver"):
        if not cp.has_section(section):
            continue
        for key, raw in cp.items(section):
            if key.endswith("_dbm"):
                base = key[:-4]
                if base not in _FIELD_BY_LOWER:
                    raise KeyError(f"unknown config key {key!r}")
                val = _parse_scalar(raw)
                kw[_FIELD_BY_LOWER[base]] = (
                    tuple(dbm_to_watt(v) for v in val) if isinstance(val, tuple)
                    else dbm_to_watt(float(val)))
            else:
                if key not in _FIELD_BY_LOWER:
                    raise KeyError(f"unknown config key {key!r}")
                kw[_FIELD_BY_LOWER[key]] = _parse_scalar(raw)
    cfg = SystemConfig(**kw)
    sweep = None
    if cp.has_section("sweep"):
        s = dict(cp.items("sweep"))
        sweep = {
            "variable": s.get("variable", "P_th"),
            "values": [v.strip() for v in s.get("values", "").split(",") if v.strip()],
            "trials": int(s.get("trials", "1")),
            "schemes": [v.strip() for v in
                        s.get("schemes", "RSMA-SHB").split(",") if v.strip()],
        }
    return cfg, sweep


def spec_from_config(cfg: SystemConfig, sweep: dict, seed: int | None = None,
                     trials: int | None = None) -> ExperimentSpec:
    name = sweep["variable"]
    if name.lower() in _FIELD_BY_LOWER:
        name = _FIELD_BY_LOWER[name.lower()]
    return ExperimentSpec(
        schemes=sweep["schemes"],
        sweep_name=name,
        sweep_values=[_coerce_sweep(name, v) for v in sweep["values"]],
        trials=trials if trials is not None else sweep["trials"],
        base=cfg,
        seed=seed if seed is not None else cfg.seed,
    )


# ---------------------------------------------------------------------------
# self-checks (fast independent verifications, used by `nfrsma verify`)


def verify_suite(seed: int = 0) -> list:
    """Run quick oracle-style checks of the core numerics.

    Returns (name, passed, detail) triples; every check is independent of
    the code path it validates (grids, explicit reconstructions, repeated
    draws).
    """
    from .surrogate import build_surrogate, eval_surrogate
    from .pbcd import update_digital
    from .twostage import balanced_allocation, swap_optimize

    rng = np.random.default_rng(seed)
    checks = []

    cfg = SystemConfig(N=16, L=4, K=2, seed=seed)
    ch1 = sample_channels(cfg, channel_rng(seed, 7))
    ch2 = sample_channels(cfg, channel_rng(seed, 7))
    checks.append(("channel determinism",
                   np.array_equal(ch1.h_hat, ch2.h_hat),
                   "same stream, same draw"))

    a = near_field_response(cfg, 5.0, 0.3)
    checks.append(("unit modulus response",
                   float(np.max(np.abs(np.abs(a) - 1))) < 1e-12,
                   "|a_n| = 1"))

    far = far_field_response(cfg, 0.3)
    near = near_field_response(cfg, 1e4 * cfg.rayleigh_distance, 0.3)
    dev = float(np.max(np.abs(np.angle(near * far.conj()))))
    checks.append(("far-field limit", dev < 1e-4, f"max phase dev {dev:.2e}"))

    ok = True
    worst = 0.0
    for _ in range(50):
        h = rng.standard_normal(8) + 1j * rng.standard_normal(8)
        Pt = rng.standard_normal((8, 3)) + 1j * rng.standard_normal((8, 3))
        Pq = rng.standard_normal((8, 3)) + 1j * rng.standard_normal((8, 3))
        chs = ChannelSet(h_hat=h[None, :] * np.ones((2, 1)), eps=np.array([0.1, 0.1]),
                         geometry=None, beta=np.array([1.0, 1.0]))
        s = build_surrogate(chs, Pt, 0.05, 0, "private", 1.0)
        tight = abs(eval_surrogate(s, Pt) - s.frozen_rate(Pt))
        gap = eval_surrogate(s, Pq) - s.frozen_rate(Pq)
        worst = max(worst, gap)
        ok = ok and tight < 1e-8 and gap < 1e-9
    checks.append(("surrogate tightness+minorization", ok, f"worst gap {worst:.2e}"))

    psi = rng.standard_normal(200) + 1j * rng.standard_normal(200)
    grid = np.exp(1j * np.linspace(0, 2 * np.pi, 3600, endpoint=False))
    best_grid = np.max(np.real(psi[:, None].conj() * grid[None, :]), axis=1)
    closed = np.abs(psi)
    checks.append(("analog phase closed form",
                   bool(np.all(closed >= best_grid - 1e-6)),
                   "closed form beats 3600-point grid"))

    Fb = np.exp(1j * rng.uniform(0, 2 * np.pi, (4, 4)))
    P = rng.standard_normal((16, 3)) + 1j * rng.standard_normal((16, 3))
    W = update_digital(P, Fb)
    resid = P - materialize(Fb, W)
    orth = max(abs(Fb[l].conj() @ resid[4 * l:4 * (l + 1)]).max() for l in range(4))
    checks.append(("digital least squares", orth < 1e-9, f"normal-equation residual {orth:.1e}"))

    ch = sample_channels(cfg, channel_rng(seed, 11))
    phi0 = balanced_allocation(cfg.L, cfg.K, rng)
    _, Fsw, trace = swap_optimize(ch, phi0)
    mono = all(b > a for a, b in zip(trace, trace[1:]))
    checks.append(("swap strict improvement", mono, f"{len(trace) - 1} swaps"))
    return checks


# ---------------------------------------------------------------------------
# CLI


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="nfrsma",
                                 description="Near-field RSMA hybrid beamfocusing solver")
    sub = ap.add_subparsers(dest="command", required=True)

    p_solve = sub.add_parser("solve", help="run one scheme at the base config")
    p_solve.add_argument("--config", required=True)
    p_solve.add_argument("--scheme", required=True, choices=SCHEMES)
    p_solve.add_argument("--out", required=True)
    p_solve.add_argument("--seed", type=int, default=None)
    p_solve.add_argument("--trials", type=int, default=1)
    p_solve.add_argument("--threads", type=int, default=1)

    p_sweep = sub.add_parser("sweep", help="run the sweep described by a spec file")
    p_sweep.add_argument("--config", required=True)
    p_sweep.add_argument("--spec", default=None,
                         help="INI file with a [sweep] section (default: --config)")
    p_sweep.add_argument("--out", required=True)
    p_sweep.add_argument("--seed", type=int, default=None)
    p_sweep.add_argument("--trials", type=int, default=None)
    p_sweep.add_argument("--threads", type=int, default=1)

    p_verify = sub.add_parser("verify", help="run the built-in oracle checks")
    p_verify.add_argument("--seed", type=int, default=0)

    args = ap.parse_args(argv)

    if args.command == "verify":
        failures = 0
        for name, ok, detail in verify_suite(args.seed):
            print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
            failures += 0 if ok else 1
        return 1 if failures else 0

    if args.command == "solve":
        cfg, _ = parse_config(args.config)
        if args.seed is not None:
            cfg = cfg.with_updates(seed=args.seed)
        # a degenerate one-value sweep reuses the experiment plumbing
        spec = ExperimentSpec(schemes=[args.scheme], sweep_name="P_th",
                              sweep_values=[cfg.P_th], trials=args.trials,
                              base=cfg, seed=cfg.seed)
        rows = run_experiment(spec, args.out, threads=args.threads)
        for r in rows:
            print(f"{r.scheme} trial {r.trial}: {r.maxmin_rate_bps_hz:.4f} bits/s/Hz "
                  f"({r.status}, {r.wall_ms:.0f} ms)")
        return 0

    if args.command == "sweep":
        cfg, sweep = parse_config(args.config)
        if args.spec is not None:
            _, sweep = parse_config(args.spec)
        if sweep is None:
            print("no [sweep] section found", file=sys.stderr)
            return 2
        spec = spec_from_config(cfg, sweep, seed=args.seed, trials=args.trials)
        rows = run_experiment(spec, args.out, threads=args.threads)
        print(f"{len(rows)} runs -> {args.out}")
        return 0

    return 2


if __name__ == "__main__":
    sys.exit(main())

"""Command-line front end: ``regap theory|simulate|reproduce|project``.

Exit codes: 0 on success, 2 for bad configuration or input, 3 when a solver
fails (the message names the offending noise level or aspect ratio).
"""
from __future__ import annotations

import argparse
import csv
import io
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .config import RunConfig
from .fixed_points import ProblemParams, effective_noises, phase_classify
from .optimal_prox import (
    CalibrationError,
    SolverError,
    compute_lambda,
    r_opt_curve,
    reconstruct_penalty,
    solve_optimal_prox,
)
from .priors import (
    ChannelCurve,
    ChannelGrid,
    ConfigurationError,
    Prior,
    default_tau_grid,
    sparse_sign_prior,
    three_point_prior,
)
from .prox import HullIndicator, HullSpec, L1, ProxRule, Ridge, Tabulated, Zero, project_hull
from .simulate import (
    SimulationError,
    amp_run,
    atom_counts,
    evaluate,
    generate_instance,
    prox_grad_solve,
    replicate_seeds,
)

EXIT_CONFIG = 2
EXIT_SOLVER = 3


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_csv(path: Path, header: list[str], rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    path.write_text(buf.getvalue())


def _threads(args) -> int:
    if args.threads is not None:
        return max(1, args.threads)
    env = os.environ.get("REGAP_THREADS")
    return max(1, int(env)) if env and env.isdigit() else 1


def _map(fn, items, threads: int) -> list:
    """Apply ``fn`` to every item; results keep the input order."""
    if threads <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _channel_grid(cfg: RunConfig) -> ChannelGrid:
    return ChannelGrid(cfg.get_int("n_intervals", 1000), cfg.get_float("tail", 0.001))


# ---------------------------------------------------------------- theory

def run_theory(cfg: RunConfig, out: Path, threads: int = 1) -> dict:
    prior = cfg.prior()
    deltas = cfg.get_grid("delta")
    sigmas = cfg.get_grid("sigma", 0.0)
    n_tau = cfg.get_int("tau_points", 2000)
    convex = cfg.get_bool("convex", True)
    grid = _channel_grid(cfg)
    taus = default_tau_grid(prior, float(deltas.min()), float(sigmas.max()), n=n_tau)
    curve = ChannelCurve.build(prior, taus)
    var = prior.var

    ropt = None
    if convex:
        ropt = r_opt_curve(prior, taus, grid)
    curve_rows = [
        (t, m, i, r) for t, m, i, r in zip(
            taus, curve.mmse, curve.mutual_info, ropt.risks if ropt is not None else [math.nan] * taus.size)
    ]
    write_csv(out / "curves.csv", ["tau", "mmse", "mi", "r_opt"], curve_rows)

    pairs = [(float(d), float(s)) for d in deltas for s in sigmas]

    def one(pair):
        d, s = pair
        try:
            return effective_noises(prior, ProblemParams(d, s), curve=curve, convex=convex, grid=grid)
        except SolverError as err:
            raise SolverError(f"delta={d:g}, sigma={s:g}: {err}", err.best, err.residual) from err

    reports = _map(one, pairs, threads)
    rows = []
    for rep in reports:
        rk = rep.risks
        rel = {k: (v / var if var > 0 else 0.0) for k, v in rk.items()}
        rows.append((rep.delta, rep.sigma, rep.tau_stat_sq, rep.tau_alg_sq, rep.tau_alg_star_sq,
                     rep.tau_cvx_sq, rk["stat"], rk["alg_star"], rk["cvx"], rel["stat"],
                     rel["alg_star"], rel["cvx"], rep.unique_stat_min))
    write_csv(out / "noises.csv",
              ["delta", "sigma", "tau_stat_sq", "tau_alg_sq", "tau_alg_star_sq", "tau_cvx_sq",
               "risk_stat", "risk_amp", "risk_cvx", "rel_stat", "rel_amp", "rel_cvx", "unique_stat_min"],
              rows)

    phase_rows = []
    for s in sigmas:
        if s <= 0:
            continue
        rep = phase_classify(prior, float(s), deltas)
        for r in rep.rows:
            phase_rows.append((float(s), r.delta, r.cvx_equals_alg, r.cvx_equals_stat, rep.delta_alg, rep.delta_stat))
    write_csv(out / "phases.csv", ["sigma", "delta", "label_alg", "label_stat", "delta_alg", "delta_stat"], phase_rows)
    return {"reports": reports}


# -------------------------------------------------------------- simulate

def _optimal_rule(prior: Prior, params: ProblemParams, grid: ChannelGrid) -> ProxRule:
    """Separable-optimal penalty at the convex effective noise, scaled for the objective."""
    rep = effective_noises(prior, params, grid=grid)
    tau = math.sqrt(rep.tau_cvx_sq)
    if not tau > 0:
        raise SolverError(f"convex effective noise is zero at delta={params.delta:g}, sigma={params.sigma:g}")
    sol = solve_optimal_prox(prior, tau, grid)
    cal = compute_lambda(sol.fn, prior, tau, params.delta, sol.risk)
    # Tabulated(fn) encodes lam * rho; the objective uses rho = (1 / lam) * that
    return ProxRule(Tabulated(sol.fn, reconstruct_penalty(sol.fn, 1.0)), 1.0 / cal.lam)


def _rule_for(cfg: RunConfig, method: str, prior: Prior, params: ProblemParams, p: int) -> ProxRule | None:
    if method == "amp":
        return None
    if method == "hull":
        counts = tuple(int(c) for c in atom_counts(prior, p))
        return ProxRule(HullIndicator(HullSpec.from_prior(prior, counts, p)))
    penalty = cfg.get_str("penalty", "zero")
    lam = cfg.get_float("lam", 1.0)
    if penalty == "zero":
        return ProxRule(Zero(), lam)
    if penalty == "l1":
        return ProxRule(L1(cfg.get_float("l1_weight", 1.0)), lam)
    if penalty == "ridge":
        return ProxRule(Ridge(cfg.get_float("ridge_weight", 1.0)), lam)
    if penalty == "optimal":
        return _optimal_rule(prior, params, _channel_grid(cfg))
    raise ConfigurationError(f"unknown penalty {penalty!r}")


def simulate_method(cfg: RunConfig, method: str, prior: Prior, params: ProblemParams, p: int,
                    seeds: list[int], threads: int = 1):
    """Run one method on every replicate; returns ``(traces, rows)`` in replicate order."""
    noise = cfg.get_str("noise", "sphere")
    rule = _rule_for(cfg, method, prior, params, p)
    step_raw = cfg.get_str("step", "auto")
    step = None if step_raw == "auto" else float(step_raw)
    accel = cfg.get_bool("accel", method == "hull")
    tol = cfg.get_float("grad_tol", 1e-10)
    max_iter = cfg.get_int("max_iter", 20000)
    t_max = cfg.get_int("t_max", 100)
    amp_mode = cfg.get_str("amp_mode", "empirical")

    def one(item):
        rep, seed = item
        inst = generate_instance(prior, params, p, noise, seed)
        try:
            if method == "amp":
                res = amp_run(inst, amp_mode, t_max)
            else:
                res = prox_grad_solve(inst, rule, step, accel, tol, max_iter)
        except SimulationError as err:
            raise SimulationError(f"{method} replicate {rep}: {err}", err.trace) from err
        return res, evaluate(res.beta_hat, inst, res.trace)

    results = _map(one, list(enumerate(seeds)), threads)
    traces, rows = [], []
    for rep, ((res, summ), seed) in enumerate(zip(results, seeds)):
        tr = res.trace
        nrec = len(tr.loss)
        for t in range(nrec):
            obj = tr.objective[t] if t < len(tr.objective) else ""
            gn = tr.grad_norm[t] if t < len(tr.grad_norm) else ""
            traces.append((method, rep, t, obj, gn, tr.loss[t]))
        rows.append((method, rep, seed, summ.loss, summ.relative_loss, summ.recovered, summ.iterations))
    return traces, rows


def _aggregate(rows) -> list:
    out = []
    for method in dict.fromkeys(r[0] for r in rows):
        sel = [r for r in rows if r[0] == method]
        loss = np.array([r[3] for r in sel])
        rel = np.array([r[4] for r in sel])
        frac = float(np.mean([r[5] for r in sel]))
        for name, fn in (("median", np.median), ("min", np.min), ("max", np.max)):
            out.append((method, name, "", float(fn(loss)), float(fn(rel)), frac, ""))
    return out


SUMMARY_HEADER = ["method", "replicate", "seed", "loss", "relative_loss", "recovered", "iterations"]
TRACE_HEADER = ["method", "replicate", "t", "objective", "grad_norm", "loss"]


def run_simulate(cfg: RunConfig, out: Path, threads: int = 1) -> list:
    prior = cfg.prior()
    params = ProblemParams(cfg.get_float("delta"), cfg.get_float("sigma", 0.0))
    p = cfg.get_int("p")
    seeds = replicate_seeds(cfg.get_int("seed"), cfg.get_int("replicates", 1))
    methods = [m.strip() for m in cfg.get_str("method", "amp").split(",") if m.strip()]
    all_traces, all_rows = [], []
    for m in methods:
        if m not in ("amp", "hull", "prox-grad"):
            raise ConfigurationError(f"unknown method {m!r}")
        tr, rows = simulate_method(cfg, m, prior, params, p, seeds, threads)
        all_traces += tr
        all_rows += rows
    write_csv(out / "traces.csv", TRACE_HEADER, all_traces)
    write_csv(out / "summary.csv", SUMMARY_HEADER, all_rows + _aggregate(all_rows))
    return all_rows


# ------------------------------------------------------------- reproduce

def run_reproduce(target: str, scale: str, cfg: RunConfig, out: Path, threads: int = 1) -> None:
    from .plotting import plot_fig1, plot_table1  # matplotlib is only needed here

    if scale not in ("desk", "paper"):
        raise ConfigurationError(f"unknown scale {scale!r}")
    seed = cfg.get_int("seed", 0)
    if target == "table1":
        prior = three_point_prior()
        delta = 0.37
        p = cfg.get_int("p", 1000 if scale == "desk" else 2000)
        reps = cfg.get_int("replicates", 20 if scale == "desk" else 500)
        sim_cfg = RunConfig.from_dict({"prior": "three_point", "delta": delta, "sigma": 0, "p": p,
                                       "replicates": reps, "seed": seed, "noise": "zero",
                                       "method": "hull,amp", "step": cfg.get_str("step", "0.1"),
                                       "accel": "true", "grad_tol": cfg.get_str("grad_tol", "1e-14"),
                                       "max_iter": cfg.get_str("max_iter", "10000")})
        rows = run_simulate(sim_cfg, out, threads)
        rep = effective_noises(prior, ProblemParams(delta, 0.0))
        var = prior.var
        table = []
        stats = {}
        for m in ("hull", "amp"):
            rel = np.array([r[4] for r in rows if r[0] == m])
            rec = np.array([r[5] for r in rows if r[0] == m])
            stats[m] = (100.0 * rec.mean(), np.median(rel), rel.min(), rel.max())
        labels = ["full_recovery_pct", "median_error", "min_error", "max_error"]
        for i, lab in enumerate(labels):
            table.append((lab, stats["hull"][i], stats["amp"][i]))
        table.append(("theory_lower_bound", delta * rep.tau_cvx_sq / var, delta * rep.tau_alg_star_sq / var))
        write_csv(out / "table1.csv", ["row", "projection", "amp"], table)
        plot_table1(out / "summary.csv", out / "table1.svg")
        return
    if target != "fig1":
        raise ConfigurationError(f"unknown target {target!r}")
    prior = sparse_sign_prior(0.2)
    deltas = [float(d) for d in cfg.get_grid("delta", "0.45, 0.5, 0.6, 0.75")]
    sigmas = [float(s) for s in cfg.get_grid("sigma", "linspace(0.05, 1.5, 30)")]
    th_cfg = RunConfig.from_dict({"prior": "sparse_sign", "delta": ", ".join(map(repr, deltas)),
                                  "sigma": ", ".join(map(repr, sigmas)), "convex": "true"})
    res = run_theory(th_cfg, out, threads)
    rows = [(r.delta, r.sigma, *(r.risks[k] for k in ("stat", "alg_star", "cvx"))) for r in res["reports"]]
    write_csv(out / "fig1_theory.csv", ["delta", "sigma", "risk_stat", "risk_amp", "risk_cvx"], rows)
    p = cfg.get_int("p", 500 if scale == "desk" else 2000)
    amp_reps = cfg.get_int("replicates", 5 if scale == "desk" else 50)
    sim_sigmas = [float(s) for s in cfg.get_grid(
        "sim_sigma", "0.1, 0.4, 0.8, 1.2" if scale == "desk" else ", ".join(map(repr, sigmas)))]
    sim_rows = []
    for d in deltas:
        for k, s in enumerate(sim_sigmas):
            base = {"prior": "sparse_sign", "delta": d, "sigma": s, "p": p, "noise": "sphere"}
            sub_seed = seed * 1000003 + int(round(1e6 * d)) * 1009 + k
            amp_cfg = RunConfig.from_dict({**base, "replicates": amp_reps, "seed": sub_seed, "method": "amp"})
            _, arows = simulate_method(amp_cfg, "amp", prior, ProblemParams(float(d), float(s)), p,
                                       replicate_seeds(sub_seed, amp_reps), threads)
            sim_rows.append((float(d), float(s), "amp", float(np.median([r[3] for r in arows]))))
            cvx_cfg = RunConfig.from_dict({**base, "penalty": "optimal", "method": "prox-grad",
                                           "grad_tol": cfg.get_str("grad_tol", "1e-8")})
            _, crows = simulate_method(cvx_cfg, "prox-grad", prior, ProblemParams(float(d), float(s)), p,
                                       replicate_seeds(sub_seed + 1, 1), threads)
            sim_rows.append((float(d), float(s), "convex", float(crows[0][3])))
    write_csv(out / "fig1_sim.csv", ["delta", "sigma", "method", "median_loss"], sim_rows)
    plot_fig1(out / "fig1_theory.csv", out / "fig1_sim.csv", out / "fig1.svg")


# --------------------------------------------------------------- project

def run_project(spec_path: Path, in_path: Path, out: Path) -> np.ndarray:
    if not spec_path.is_file():
        raise ConfigurationError(f"spec file {spec_path} not found")
    if not in_path.is_file():
        raise ConfigurationError(f"input file {in_path} not found")
    spec = HullSpec.from_text(spec_path.read_text())
    vals = []
    for row in csv.reader(in_path.read_text().splitlines()):
        if not row or not row[0].strip():
            continue
        try:
            vals.append(float(row[0]))
        except ValueError:
            if vals:
                raise ConfigurationError(f"bad number {row[0]!r} in {in_path}") from None
    b = project_hull(spec, np.asarray(vals))
    write_csv(out / "projection.csv", ["value"], [(v,) for v in b])
    return b


# ------------------------------------------------------------------ main

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="regap", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="key = value config file")
    common.add_argument("--seed", type=int, help="master seed (overrides the config)")
    common.add_argument("--out", type=Path, default=Path("."), help="output directory")
    common.add_argument("--threads", type=int, help="worker threads (default: REGAP_THREADS or 1)")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("theory", parents=[common], help="effective noises, risk curves and phase labels")
    sub.add_parser("simulate", parents=[common], help="Monte-Carlo runs of AMP or proximal gradient")
    rp = sub.add_parser("reproduce", parents=[common], help="rebuild a table or figure")
    rp.add_argument("target", choices=["table1", "fig1"])
    rp.add_argument("--scale", choices=["desk", "paper"], default="desk")
    pj = sub.add_parser("project", parents=[common], help="project a vector onto a permutation hull")
    pj.add_argument("--spec", type=Path, required=True)
    pj.add_argument("--in", dest="infile", type=Path, required=True)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.out.mkdir(parents=True, exist_ok=True)
        threads = _threads(args)
        if args.command == "project":
            run_project(args.spec, args.infile, args.out)
            return 0
        if args.config is not None:
            cfg = RunConfig.load(args.config)
        elif args.command == "reproduce":
            cfg = RunConfig()
        else:
            raise ValueError("--config is required")
        if args.seed is not None:
            cfg.set("seed", args.seed)
        if args.command == "theory":
            run_theory(cfg, args.out, threads)
        elif args.command == "simulate":
            if not cfg.has("seed"):
                raise ValueError("a seed is required (config key 'seed' or --seed)")
            run_simulate(cfg, args.out, threads)
        else:
            run_reproduce(args.target, args.scale, cfg, args.out, threads)
    except (SolverError, CalibrationError, SimulationError) as err:
        print(f"regap: solver failure: {err}", file=sys.stderr)
        return EXIT_SOLVER
    except (ValueError, OSError) as err:
        print(f"regap: {err}", file=sys.stderr)
        return EXIT_CONFIG
    return 0


if __name__ == "__main__":
    sys.exit(main())

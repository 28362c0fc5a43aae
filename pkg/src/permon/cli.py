"""Command-line interface: simulate, optimize, gradcheck, reproduce, sample-rates.

All outputs are decision-free artifacts: CSV files with documented headers
(floats printed with 17 significant digits, so reruns are bit-identical) and
optional static SVG renderings of the same data.

Exit codes: 0 success, 1 numeric/tolerance failure, 2 usage or validation
error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .errors import ConfigError, NumericError, PolicyError
from .model import Policy
from .optimizer import OptimizationRun, optimize
from .oracle import dense_simulate, gradient_check
from .scenario import (BUILTIN_NAMES, Scenario, builtin_scenario, dump_policy,
                       dump_scenario, load_scenario)
from .simulator import Trajectory, simulate, stability_report
from .stochastic import sample_rate_process, simulate_with_process

log = logging.getLogger(__name__)

FLOAT_FMT = "%.17g"


def _fmt(x) -> str:
    return FLOAT_FMT % float(x)


# ---------------------------------------------------------------------------
# CSV writers.

def _sample_times(traj: Trajectory, sample_dt: float) -> np.ndarray:
    """Regular sample grid united with every event time.

    Motion is linear and uncertainty polynomial between event times, so a
    series sampled on this grid determines the plotted trajectory exactly.
    """
    ts = np.arange(0.0, traj.horizon + 0.5 * sample_dt, sample_dt)
    return np.unique(np.concatenate(
        (np.clip(ts, 0.0, traj.horizon), [e.time for e in traj.events],
         [0.0, traj.horizon])))


def write_trajectory_csv(path: Path, traj: Trajectory, sample_dt: float) -> None:
    """Columns: t, s_1..s_N, R_1..R_M, sampled on the regular grid plus all
    event times."""
    ts = _sample_times(traj, sample_dt)
    pos = traj.positions(ts)
    rs = np.stack([traj.uncertainty(i, ts) for i in range(traj.n_points)])
    header = ["t"] + [f"s_{n + 1}" for n in range(traj.n_agents)] \
        + [f"R_{i + 1}" for i in range(traj.n_points)]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for k, t in enumerate(ts):
            row = [_fmt(t)] + [_fmt(x) for x in pos[:, k]] + [_fmt(x) for x in rs[:, k]]
            fh.write(",".join(row) + "\n")


def write_events_csv(path: Path, traj: Trajectory) -> None:
    """Columns: time, kind, agent, xi, point (indices 1-based, empty if n/a)."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("time,kind,agent,xi,point\n")
        for e in traj.events:
            agent = str(e.agent + 1) if e.agent >= 0 else ""
            xi = str(e.xi) if e.xi > 0 else ""
            point = str(e.point + 1) if e.point >= 0 else ""
            fh.write(f"{_fmt(e.time)},{e.kind.name.lower()},{agent},{xi},{point}\n")


def write_iterations_csv(path: Path, run: OptimizationRun) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("iteration,cost,projected_grad_norm,eta\n")
        for rec in run.history:
            fh.write(f"{rec.iteration},{_fmt(rec.cost)},"
                     f"{_fmt(rec.grad_norm)},{_fmt(rec.eta)}\n")


def write_gradient_csv(path: Path, report) -> None:
    """One row per parameter: agent and xi are 1-based."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("agent,kind,xi,value,ipa,fd,abs_error,rel_error,"
                 "one_sided,excluded,reason\n")
        for r in report.rows:
            fh.write(f"{r['agent'] + 1},{r['kind']},{r['xi']},{_fmt(r['value'])},"
                     f"{_fmt(r['ipa'])},{_fmt(r['fd'])},{_fmt(r['abs_error'])},"
                     f"{_fmt(r['rel_error'])},{int(r['one_sided'])},"
                     f"{int(r['excluded'])},\"{r['reason']}\"\n")


def write_rates_csv(path: Path, process) -> None:
    """Columns: point (1-based), time, value; one row per held value."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("point,time,value\n")
        for i in range(process.n_points):
            times = np.concatenate(([0.0], process.jumps[i]))
            for t, v in zip(times, process.values[i]):
                fh.write(f"{i + 1},{_fmt(t)},{_fmt(v)}\n")


def write_stability_txt(path: Path, rows) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{'point':>5} {'max':>12} {'min':>12} {'mean':>12} "
                 f"{'emptied':>8} {'stable':>7}\n")
        for r in rows:
            fh.write(f"{r['point'] + 1:>5} {r['max']:>12.4f} {r['min']:>12.4f} "
                     f"{r['mean']:>12.4f} {str(r['emptied']):>8} "
                     f"{str(r['stable']):>7}\n")


# ---------------------------------------------------------------------------
# SVG plots (derived views of the CSV data).

def _matplotlib():
    import matplotlib
    matplotlib.use("Agg")
    matplotlib.rcParams["svg.hashsalt"] = "permon"
    import matplotlib.pyplot as plt
    return plt


def plot_trajectory_svg(path: Path, traj: Trajectory, policy: Policy | None,
                        magnify=None, sample_dt: float = 1.0) -> None:
    """Render the position series of the trajectory CSV (same sample grid, so
    the plot is a lossless view of the exported data)."""
    plt = _matplotlib()
    ts = _sample_times(traj, sample_dt)
    fig, ax = plt.subplots(figsize=(8, 3.2))
    for n in range(traj.n_agents):
        ax.plot(ts, traj.profiles[n].position(ts), lw=0.9,
                label=f"agent {n + 1}")
        reached = traj.profiles[n].reached
        arr = traj.profiles[n].arrivals[reached]
        if policy is not None and arr.size:
            ax.plot(arr, policy.switches[n][reached], ".", ms=3)
    ax.set_xlabel("t")
    ax.set_ylabel("position")
    if magnify is not None:
        ax.set_xlim(*magnify)
    if traj.n_agents > 1:
        ax.legend(loc="upper right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def plot_cost_svg(path: Path, run: OptimizationRun) -> None:
    plt = _matplotlib()
    fig, ax = plt.subplots(figsize=(6, 3.0))
    ax.plot([r.iteration for r in run.history], [r.cost for r in run.history],
            lw=1.0)
    ax.set_xlabel("iteration")
    ax.set_ylabel("J")
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


# ---------------------------------------------------------------------------
# Commands.

def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load(args) -> Scenario:
    sc = load_scenario(args.scenario)
    if args.seed is not None:
        from dataclasses import replace
        sc.optimizer = replace(sc.optimizer, seed=int(args.seed))
    if args.constant_step is not None:
        from dataclasses import replace
        from .optimizer import ConstantStep
        eta_s, eta_w = args.constant_step
        sc.optimizer = replace(sc.optimizer,
                               step=ConstantStep(float(eta_s), float(eta_w)))
    return sc


def cmd_simulate(args) -> int:
    sc = _load(args)
    if sc.policy is None:
        print("error: scenario has no policy section; simulate needs one",
              file=sys.stderr)
        return 2
    out = _out_dir(args)
    process = None
    if sc.stochastic is not None:
        process = sample_rate_process(
            sc.optimizer.seed, sc.mission.horizon, sc.stochastic.mu,
            sc.stochastic.lo, sc.stochastic.hi, sc.mission.n_points,
            decay=sc.mission.decay)
    traj = (simulate_with_process(sc.mission, sc.policy, process)
            if process is not None else simulate(sc.mission, sc.policy))
    write_trajectory_csv(out / "trajectory.csv", traj, sc.output.sample_dt)
    write_events_csv(out / "events.csv", traj)
    rows = stability_report(traj)
    write_stability_txt(out / "stability.txt", rows)
    if sc.output.plot if args.plot is None else args.plot:
        plot_trajectory_svg(out / "trajectory.svg", traj, sc.policy,
                            sc.output.magnify, sc.output.sample_dt)
    emptied = sum(1 for r in rows if r["emptied"])
    stable = sum(1 for r in rows if r["stable"])
    print(f"J = {traj.cost:.6f}")
    print(f"points emptied at least once: {emptied}/{len(rows)}; "
          f"inflow < service: {stable}/{len(rows)}")
    if traj.warnings:
        print(f"warnings: {len(traj.warnings)} coincident-event merges")
    return 0


def _run_one_optimize(sc: Scenario, seed: int) -> OptimizationRun:
    from dataclasses import replace
    settings = replace(sc.optimizer, seed=seed)
    return optimize(sc.mission, settings, warm_start=sc.policy,
                    stochastic=sc.stochastic)


def _optimize_entry(payload):
    sc, seed = payload
    run = _run_one_optimize(sc, seed)
    return seed, run.final_cost, run.status, len(run.history), run.runtime


def cmd_optimize(args) -> int:
    sc = _load(args)
    out = _out_dir(args)
    if args.seeds:
        seeds = [int(s) for s in args.seeds.split(",")]
        with ProcessPoolExecutor(max_workers=min(len(seeds), 4)) as pool:
            results = list(pool.map(_optimize_entry,
                                    [(sc, s) for s in seeds]))
        results.sort()
        with open(out / "seeds.csv", "w", encoding="utf-8") as fh:
            fh.write("seed,final_cost,status,iterations,runtime_s\n")
            for seed, cost, status, iters, rt in results:
                fh.write(f"{seed},{_fmt(cost)},{status},{iters},{rt:.2f}\n")
        mean_cost = float(np.mean([r[1] for r in results]))
        print(f"{len(seeds)} seeds: mean final J = {mean_cost:.6f}")
        for seed, cost, status, iters, rt in results:
            print(f"  seed {seed}: J = {cost:.6f} ({status}, {iters} iters, "
                  f"{rt:.1f} s)")
        return 0
    progress = None
    if not args.quiet:
        def progress(it, cost, gnorm, eta):
            if it % 10 == 0:
                print(f"  iter {it:4d}  J = {cost:.6f}  |grad~| = {gnorm:.3e}  "
                      f"eta = {eta:.3e}")
    run = _run_one_optimize(sc, sc.optimizer.seed)
    write_iterations_csv(out / "iterations.csv", run)
    dump_policy(run.trimmed_policy, out / "policy.yaml")
    write_trajectory_csv(out / "trajectory.csv", run.final_trajectory,
                         sc.output.sample_dt)
    write_events_csv(out / "events.csv", run.final_trajectory)
    if sc.output.plot if args.plot is None else args.plot:
        plot_trajectory_svg(out / "trajectory.svg", run.final_trajectory,
                            run.final_policy, sc.output.magnify,
                            sc.output.sample_dt)
        plot_cost_svg(out / "cost.svg", run)
    print(f"status: {run.status} after {len(run.history)} iterations "
          f"({run.runtime:.1f} s)")
    print(f"final J = {run.final_cost:.6f}, |projected grad| = "
          f"{run.final_grad_norm:.3e}")
    print(f"reached switch counts: {run.reached_counts}")
    if sc.expected_cost is not None:
        dev = (run.final_cost - sc.expected_cost) / sc.expected_cost
        print(f"reference J* = {sc.expected_cost:.2f}, deviation = {dev:+.2%}")
    return 0


def cmd_gradcheck(args) -> int:
    sc = _load(args)
    if sc.policy is None:
        print("error: gradcheck needs a policy section", file=sys.stderr)
        return 2
    out = _out_dir(args)
    report = gradient_check(sc.mission, sc.policy, h=args.fd_step,
                            tolerance=args.tolerance)
    write_gradient_csv(out / "gradcheck.csv", report)
    n = len(report.rows)
    print(f"{n} components, {report.n_excluded} excluded, max relative error "
          f"= {report.max_rel_error:.3e} (tolerance {report.tolerance:g})")
    if report.worst is not None:
        w = report.worst
        print(f"worst: agent {w['agent'] + 1} {w['kind']} xi={w['xi']} "
              f"ipa={w['ipa']:.8g} fd={w['fd']:.8g}")
    if not report.passed:
        print("FAIL: gradient mismatch beyond tolerance", file=sys.stderr)
        return 1
    print("PASS")
    return 0


def cmd_reproduce(args) -> int:
    try:
        sc = builtin_scenario(args.name)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    out = _out_dir(args)
    dump_scenario(sc, out / f"{sc.name}.yaml")
    if args.seed is not None:
        seeds = [int(args.seed)]
    elif args.seeds:
        seeds = [int(s) for s in args.seeds.split(",")]
    else:
        seeds = [sc.optimizer.seed]
    finals = []
    for seed in seeds:
        run = _run_one_optimize(sc, seed)
        finals.append(run.final_cost)
        print(f"seed {seed}: status={run.status} iters={len(run.history)} "
              f"J={run.final_cost:.6f} ({run.runtime:.1f} s)")
    write_iterations_csv(out / "iterations.csv", run)
    dump_policy(run.trimmed_policy, out / "policy.yaml")
    write_trajectory_csv(out / "trajectory.csv", run.final_trajectory,
                         sc.output.sample_dt)
    write_events_csv(out / "events.csv", run.final_trajectory)
    if args.plot is None or args.plot:
        plot_trajectory_svg(out / "trajectory.svg", run.final_trajectory,
                            run.final_policy, sc.output.magnify,
                            sc.output.sample_dt)
        plot_cost_svg(out / "cost.svg", run)
    mean_final = float(np.mean(finals))
    lines = [f"scenario: {sc.name}",
             f"seeds: {seeds}",
             f"mean final J: {mean_final:.6f}",
             f"initial J: {run.history[0].cost:.6f}"]
    if sc.expected_cost is not None:
        dev = (mean_final - sc.expected_cost) / sc.expected_cost
        lines.append(f"reference J*: {sc.expected_cost:.2f}")
        lines.append(f"deviation: {dev:+.2%}")
    else:
        lines.append("reference J*: n/a (two-agent reference values are "
                     "unreliable; convergence checked instead)")
        drop = 1.0 - run.final_cost / run.history[0].cost
        lines.append(f"cost reduction: {drop:.1%}")
    if sc.mission.n_agents > 1:
        traj = run.final_trajectory
        ts = np.linspace(0.0, traj.horizon, 40001)
        pos = traj.positions(ts)
        frac = float(np.mean(np.diff(pos, axis=0) <= 1e-12))
        lines.append(f"agent-order violations: {frac:.4%} of samples")
    summary = "\n".join(lines)
    (out / "summary.txt").write_text(summary + "\n", encoding="utf-8")
    print(summary)
    return 0


def cmd_sample_rates(args) -> int:
    sc = _load(args)
    if sc.stochastic is None:
        print("error: scenario has no stochastic section", file=sys.stderr)
        return 2
    out = _out_dir(args)
    process = sample_rate_process(
        sc.optimizer.seed, sc.mission.horizon, sc.stochastic.mu,
        sc.stochastic.lo, sc.stochastic.hi, sc.mission.n_points,
        decay=sc.mission.decay)
    write_rates_csv(out / "rates.csv", process)
    n_jumps = sum(len(j) for j in process.jumps)
    print(f"wrote {n_jumps + process.n_points} held values for "
          f"{process.n_points} points to {out / 'rates.csv'}")
    return 0


# ---------------------------------------------------------------------------
# Argument parsing.

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="permon",
        description="1-D multi-agent patrol simulation and optimization")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, scenario=True):
        if scenario:
            p.add_argument("--scenario", required=True, help="scenario YAML path")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--seed", default=None, help="override scenario seed")
        p.add_argument("--plot", dest="plot", action="store_true", default=None)
        p.add_argument("--no-plot", dest="plot", action="store_false")
        p.add_argument("--quiet", action="store_true")
        p.add_argument("--constant-step", nargs=2, metavar=("ETA_SWITCH", "ETA_DWELL"),
                       default=None, help="force constant step sizes")

    p = sub.add_parser("simulate", help="simulate a scenario's policy")
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("optimize", help="run the descent loop")
    common(p)
    p.add_argument("--seeds", default=None,
                   help="comma-separated seed list; runs fan out concurrently")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("gradcheck", help="compare gradients against finite differences")
    common(p)
    p.add_argument("--fd-step", type=float, default=1e-5)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("reproduce", help="run a built-in benchmark scenario")
    p.add_argument("name", help=f"one of: {', '.join(BUILTIN_NAMES)}")
    common(p, scenario=False)
    p.add_argument("--seeds", default=None, help="comma-separated seed list")
    p.set_defaults(func=cmd_reproduce)

    p = sub.add_parser("sample-rates", help="dump a growth-rate process draw")
    common(p)
    p.set_defaults(func=cmd_sample_rates)

    p = sub.add_parser("dense", help="run the brute-force integrator")
    common(p)
    p.add_argument("--dt", type=float, default=1e-4)
    p.set_defaults(func=cmd_dense)
    return parser


def cmd_dense(args) -> int:
    sc = _load(args)
    if sc.policy is None:
        print("error: dense needs a policy section", file=sys.stderr)
        return 2
    j_dense = dense_simulate(sc.mission, sc.policy, args.dt)
    traj = simulate(sc.mission, sc.policy)
    print(f"dense J(dt={args.dt:g}) = {j_dense:.8f}")
    print(f"exact J = {traj.cost:.8f}")
    print(f"difference = {abs(j_dense - traj.cost):.3e}")
    return 0


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except (ConfigError, PolicyError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

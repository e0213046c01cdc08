"""Command-line entry point: default experiment, consensus benchmark, bound check."""

from __future__ import annotations

import argparse
import csv
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import analysis
from .config import BENCH, ConfigError, ExperimentConfig, load_config, seed_for
from .consensus import ConsensusError, FtercEngine, ratio_consensus_estimates, steps_to_tolerance
from .graph import default_weights, random_strongly_connected
from .optimizer import ExperimentSetup, run_experiment, summarize, write_curve_csv
from .problems import save_dataset

STATE_SPREAD_TOL = 1e-10
STEPSIZE_SPREAD_TOL = 1e-12


def _task(args):
    config, mode, graph_index, repetition = args
    return run_experiment(config, mode, graph_index, repetition)


def run_many(config: ExperimentConfig, tasks: list[tuple[str, int, int]]):
    """Run ``(mode, graph, repetition)`` tasks; results come back in task order."""
    jobs = [(config, *t) for t in tasks]
    if config.workers == 1 or len(jobs) == 1:
        return [_task(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=config.workers) as pool:
        return list(pool.map(_task, jobs))


def problem_constants(setup: ExperimentSetup, records):
    """Curvature constants and the noise bound over a box containing every visited iterate."""
    pts = [setup.x0] + [r.x_next for rec in records for r in rec.rounds]
    pts = np.concatenate([p.reshape(-1, setup.problem.dim) for p in pts])
    return setup.problem.constants((pts.min(axis=0), pts.max(axis=0)))


def bound_report(config: ExperimentConfig, setup: ExperimentSetup, graph_index: int = 0) -> dict:
    runs = run_many(config, [("fterc", graph_index, rep) for rep in range(config.repetitions)])
    failed = [r.error for r in runs if r.failed]
    if failed:
        return {"ok": False, "failed_runs": failed}
    consts = problem_constants(setup, runs)
    report = analysis.bound_check(runs, consts.L, consts.mu, consts.sigma_stacked)
    report["sigma_per_node"] = consts.sigma
    report["graph_index"] = graph_index
    report["graph_sha256"] = runs[0].meta["graph_sha256"]
    report["failed_runs"] = []
    return report


def _trace_writer(out: Path, mode: str):
    tdir = out / "traces"
    tdir.mkdir(parents=True, exist_ok=True)

    def hook(k, what, trace):
        Y, X = trace
        Y = Y.reshape(Y.shape[0], Y.shape[1], -1)
        with open(tdir / f"{mode}_k{k:04d}_{what}.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "node"] + [f"y{c}" for c in range(Y.shape[2])] + ["x"])
            for t in range(Y.shape[0]):
                for i in range(Y.shape[1]):
                    w.writerow([t, i] + [repr(float(v)) for v in Y[t, i]] + [repr(float(X[t, i]))])

    return hook


def run_repro(config: ExperimentConfig) -> int:
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    setup = ExperimentSetup.build(config)
    save_dataset(setup.data, out / "dataset.csv")

    tasks = [(mode, g, 0) for mode in config.modes for g in range(config.num_graphs)]
    records = run_many(config, tasks)
    by_mode = {m: [r for r in records if r.mode == m] for m in config.modes}
    if config.dump_traces:
        for mode in config.modes:
            run_experiment(config, mode, 0, 0, setup, trace_hook=_trace_writer(out, mode))

    consts = problem_constants(setup, records)
    checks: dict[str, bool] = {}
    meta = {
        "config": config.result_dict(),
        "optimum": setup.optimum.tolist(),
        "constants": {"L": consts.L, "mu": consts.mu, "sigma": consts.sigma, "sigma_stacked": consts.sigma_stacked},
        "seed_derivation": "SeedSequence(master_seed, spawn_key=(purpose, *indices)); "
        "data=(0,), graph=(1,g), init=(2,), sampling=(3,g,rep,node), probe=(4,g), bench=(5,N,g)",
        "runs": [],
    }
    for mode, recs in by_mode.items():
        failed = [r for r in recs if r.failed]
        checks[f"{mode}_runs_completed"] = not failed
        ok = [r for r in recs if not r.failed] or recs
        curve = summarize(ok)
        n = len(curve["eps"])
        thm1 = np.full(n, np.nan)
        rem2 = np.full(n, np.nan)
        if mode == "fterc":
            pairs = [r.bounds(consts.L, consts.mu, consts.sigma_stacked) for r in ok]
            thm1 = np.mean([p[0][:n] for p in pairs], axis=0)
            rem2 = np.mean([p[1][:n] for p in pairs], axis=0)
            checks["fterc_state_homogeneous"] = bool(np.all(curve["x_spread"] <= STATE_SPREAD_TOL))
            checks["fterc_stepsize_homogeneous"] = bool(np.all(curve["lam_spread"][1:] <= STEPSIZE_SPREAD_TOL))
        curve_meta = {"mode": mode, "graphs": [r.meta["graph_sha256"] for r in recs], "config": config.result_dict()}
        text = write_curve_csv(
            curve_meta,
            {
                "lambda": curve["lambda"],
                "eps": curve["eps"],
                "eta_min": curve["eta_min"],
                "eta_max": curve["eta_max"],
                "x_spread": curve["x_spread"],
                "bound_thm1": thm1,
                "bound_rem2": rem2,
            },
        )
        (out / f"curve_{mode}.csv").write_text(text)
        for r in recs:
            meta["runs"].append({**r.meta, "failed": r.failed, "error": r.error})
        print(f"{mode}: eps[0]={curve['eps'][0]:.4e} eps[K]={curve['eps'][-1]:.4e} "
              f"max x_spread={curve['x_spread'].max():.2e} max lambda spread={curve['lam_spread'].max():.2e}")

    if "fterc" in config.modes:
        report = bound_report(config, setup)
        (out / "bounds.json").write_text(json.dumps(report, indent=1, sort_keys=True) + "\n")
        checks["bounds_hold"] = bool(report["ok"])
        if "mean_dist" in report:
            print(analysis.format_report(report, every=max(1, config.rounds // 10)))
    meta["checks"] = checks
    (out / "run_meta.json").write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")
    for name, ok in checks.items():
        print(f"{'PASS' if ok else 'FAIL'} {name}")
    return 0 if all(checks.values()) else 1


def run_bound_check(config: ExperimentConfig) -> int:
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    setup = ExperimentSetup.build(config)
    report = bound_report(config, setup)
    (out / "bounds.json").write_text(json.dumps(report, indent=1, sort_keys=True) + "\n")
    if "mean_dist" in report:
        print(analysis.format_report(report, every=max(1, config.rounds // 10)))
    print("PASS bounds_hold" if report["ok"] else "FAIL bounds_hold")
    return 0 if report["ok"] else 1


def consensus_bench_rows(config: ExperimentConfig):
    """One row per random digraph: FTERC window and error vs plain ratio consensus."""
    rows = []
    for n in config.bench_sizes:
        for g in range(config.bench_graphs):
            ss = seed_for(config.master_seed, BENCH, n, g)
            graph_seed, probe_seed, input_seed = ss.spawn(3)
            graph = random_strongly_connected(n, config.edge_density, graph_seed)
            P = default_weights(graph)
            rng = np.random.default_rng(input_seed)
            engine = FtercEngine(
                graph, P, n,
                rank_tol=config.rank_tol, floor_tol=config.floor_tol,
                probes=config.probes, probe_seed=probe_seed,
            )
            engine.round(rng.normal(size=n))
            v = rng.normal(size=n)
            est = engine.round(v)
            steps = engine.last_steps
            ratio_err = np.abs(ratio_consensus_estimates(P, v, steps - 1) - v.mean()).max()
            try:
                ratio_steps = steps_to_tolerance(P, v, 1e-8)
            except ConsensusError:
                ratio_steps = -1
            rows.append({
                "N": n,
                "graph": g,
                "steps_to_exact_fterc": steps,
                "fterc_error": float(np.abs(est - v.mean()).max()),
                "steps_to_1e-8_ratio_consensus": ratio_steps,
                "ratio_error_at_fterc_steps": float(ratio_err),
            })
    return rows


def run_consensus_bench(config: ExperimentConfig) -> int:
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = consensus_bench_rows(config)
    with open(out / "consensus_bench.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
    exact = all(r["fterc_error"] <= 1e-8 for r in rows)
    within = all(r["steps_to_exact_fterc"] <= r["N"] for r in rows)
    print(f"{'N':>4} {'fterc steps':>12} {'fterc err':>10} {'ratio steps 1e-8':>17} {'ratio err':>10}")
    for n in config.bench_sizes:
        sub = [r for r in rows if r["N"] == n]
        print(f"{n:>4} {np.mean([r['steps_to_exact_fterc'] for r in sub]):>12.1f} "
              f"{max(r['fterc_error'] for r in sub):>10.1e} "
              f"{np.mean([r['steps_to_1e-8_ratio_consensus'] for r in sub]):>17.1f} "
              f"{max(r['ratio_error_at_fterc_steps'] for r in sub):>10.1e}")
    print(f"{'PASS' if exact else 'FAIL'} fterc_exact")
    print(f"{'PASS' if within else 'FAIL'} fterc_window_within_N")
    return 0 if exact and within else 1


COMMANDS = {"repro": run_repro, "consensus-bench": run_consensus_bench, "bound-check": run_bound_check}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dlas-ftc", description=__doc__)
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", type=Path, help="flat TOML file; unset keys keep their defaults")
    parser.add_argument("--seed", type=int, dest="master_seed", help="master seed (unsigned 64-bit)")
    parser.add_argument("--rounds", type=int, help="number of rounds K after round zero")
    parser.add_argument("--mode", choices=["fterc", "gossip", "both"], dest="coordination")
    parser.add_argument("--out", dest="out_dir", help="output directory")
    parser.add_argument("--dump-traces", action="store_true", default=None, help="write twin-iteration traces")
    parser.add_argument("--repetitions", type=int, help="gradient-sampling repetitions for the bound check")
    parser.add_argument("--graphs", type=int, dest="num_graphs", help="number of random digraphs")
    parser.add_argument("--workers", type=int, help="worker processes")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {k: v for k, v in vars(args).items() if k not in ("command", "config")}
    if overrides.get("master_seed") is not None and not 0 <= overrides["master_seed"] < 2**64:
        print("error: master_seed: must be an unsigned 64-bit integer", file=sys.stderr)
        return 2
    try:
        config = load_config(args.config, **overrides)
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return COMMANDS[args.command](config)


if __name__ == "__main__":
    sys.exit(main())

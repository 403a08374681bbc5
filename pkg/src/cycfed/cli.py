"""Command-line front end: ``run``, ``sweep``, ``verify`` and ``cost``."""

from __future__ import annotations

import argparse
import csv
import io
import itertools
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__
from .analysis import cost_gd, cost_sgd, cost_ssgd_vs_alternatives, gd_cycling_sweep
from .config import ConfigError, DatasetSpec, ExperimentConfig, load
from .engine import DivergenceError, RunConfig, RunLog, run, theoretical_step_size
from .fed_datasets import make_classification_population
from .quadratic_lab import make_population
from .verify import SUITE_NAMES, run_suite

log = logging.getLogger("cycfed")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DIVERGED = 2
EXIT_CHECK_FAILED = 3
DEFAULT_OUT = "cycfed-out"


def build_population(cfg: ExperimentConfig):
    p, s, r = cfg.population, cfg.schedule, cfg.run
    if isinstance(p, DatasetSpec):
        pop = make_classification_population(p.C, p.d, p.n, p.separation, p.M, p.concentration, r.B, s.K_bar, s.grouping, p.l2, p.seed)
        pop.solve_optimum()
        return pop
    return make_population(p.d, p.M, s.K_bar, r.B, p.gamma, p.alpha, p.nu_bar, p.spectrum, p.seed, p.hessian_perturbation)


def build_run_config(cfg: ExperimentConfig, pop) -> RunConfig:
    r, s = cfg.run, cfg.schedule
    T = r.K * s.K_bar
    warnings: list[str] = []
    eta_theorem = None
    if r.eta == "theorem":
        step = theoretical_step_size(r.mode, pop.constants, pop.num_clients, s.K_bar, r.N, r.tau, r.B, T)
        eta, eta_theorem = step.eta_local, step.eta
        if step.below_bound:
            warnings.append(f"T={T} is below the step-size bound T >= {step.required_T:.1f}")
    else:
        eta = float(r.eta)
    if r.mode == "SGD" and r.b > pop.num_samples(0):
        raise ConfigError(f"minibatch b={r.b} exceeds the client sample count {pop.num_samples(0)}", "run.b")
    return RunConfig(pop, r.mode, eta, r.K, r.N, r.tau, r.b, r.seed, cfg.output.record_iterates, order=s.order, eta_theorem=eta_theorem, warnings=warnings)


def summary_text(runlog: RunLog) -> str:
    m = runlog.meta
    last = runlog.records[-1] if runlog.records else None
    lines = [
        f"mode: {m['mode']}",
        f"rounds: {m['T']} (K={m['K']}, K_bar={m['K_bar']}, N={m['N']}, tau={m['tau']}, b={m['minibatch']}, B={m['B']})",
        f"seed: {m['seed']}",
        f"eta_local: {m['eta_local']!r}",
        f"eta_prescribed: {m['eta_theorem']!r}",
        f"final_loss_gap: {last.loss_gap!r}" if last else "final_loss_gap: n/a",
        f"final_grad_norm: {last.grad_norm!r}" if last else "final_grad_norm: n/a",
        f"gradient_evaluations: {last.evals}" if last else "gradient_evaluations: 0",
        f"max_aggregation_error: {m['max_aggregation_error']!r}",
        f"warnings: {len(m['warnings'])}",
    ]
    lines += [f"warning: {w}" for w in m["warnings"]]
    return "\n".join(lines) + "\n"


def iterates_csv(iterates: Sequence[np.ndarray]) -> str:
    """One row per model, ``t`` = rounds completed (0 is the initial model)."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["t", *(f"w{j}" for j in range(len(iterates[0])))])
    for t, w in enumerate(iterates):
        writer.writerow([t, *(repr(float(x)) for x in w)])
    return buf.getvalue()


def execute(cfg: ExperimentConfig, out_dir: Path) -> RunLog:
    """Build, run and write ``runlog.csv``, ``summary.txt`` and optionally ``iterates.csv`` into ``out_dir``."""
    pop = build_population(cfg)
    rc = build_run_config(cfg, pop)
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        runlog = run(rc)
    except DivergenceError as exc:
        (out_dir / "summary.txt").write_text(f"diverged: {exc}\n", encoding="utf-8")
        raise
    (out_dir / "runlog.csv").write_text(runlog.to_csv(), encoding="utf-8")
    if runlog.iterates is not None:
        (out_dir / "iterates.csv").write_text(iterates_csv(runlog.iterates), encoding="utf-8")
    (out_dir / "summary.txt").write_text(summary_text(runlog), encoding="utf-8")
    return runlog


def resolve_out(flag: str | None, cfg: ExperimentConfig | None = None) -> Path:
    if flag:
        return Path(flag)
    if cfg is not None and cfg.output.directory:
        return Path(cfg.output.directory)
    return Path(os.environ.get("CYCFED_OUT") or DEFAULT_OUT)


def _load_config(args) -> ExperimentConfig:
    cfg = load(args.config)
    if args.seed is not None:
        cfg = replace(cfg, run=replace(cfg.run, seed=args.seed))
    return cfg


def cmd_run(args) -> int:
    try:
        cfg = _load_config(args)
        out = resolve_out(args.out, cfg)
        runlog = execute(cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for w in runlog.meta["warnings"]:
        print(f"warning: {w}", file=sys.stderr)
    print(f"wrote {out / 'runlog.csv'} ({len(runlog)} rounds), final loss gap {runlog.records[-1].loss_gap:.6g}")
    return EXIT_OK


def _cell_worker(payload: tuple[ExperimentConfig, str]) -> dict[str, Any]:
    cfg, out = payload
    try:
        runlog = execute(cfg, Path(out))
        return {"status": "ok", "final_loss_gap": runlog.records[-1].loss_gap, "warnings": len(runlog.meta["warnings"])}
    except DivergenceError as exc:
        return {"status": "diverged", "error": str(exc)}
    except (ConfigError, ValueError) as exc:
        return {"status": "error", "error": str(exc)}


def sweep_cells(cfg: ExperimentConfig) -> list[tuple[int, int, int]]:
    """Cartesian product ``(K_bar, T, seed)``; an empty list keeps the base value."""
    sw = cfg.sweep
    k_bars = sw.K_bar or [cfg.schedule.K_bar]
    seeds = sw.seeds or [cfg.run.seed]
    cells = []
    for kb in k_bars:
        horizons = sw.T or [cfg.run.K * kb]
        for T in horizons:
            for seed in seeds:
                cells.append((kb, T, seed))
    return cells


SWEEP_HEADER = ("K_bar", "T", "seeds", "succeeded", "mean_final_loss_gap", "min_final_loss_gap", "max_final_loss_gap", "failures")


def cmd_sweep(args) -> int:
    try:
        cfg = _load_config(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    sw = cfg.sweep
    if not (sw.K_bar or sw.T or sw.seeds):
        return cmd_run(args)
    out = resolve_out(args.out, cfg)
    cells = sweep_cells(cfg)
    payloads, results = [], {}
    for kb, T, seed in cells:
        try:
            cell_cfg = cfg.with_cell(K_bar=kb, T=T, seed=seed)
            payloads.append(((kb, T, seed), (cell_cfg, str(out / "cells" / f"K_bar={kb}_T={T}_seed={seed}"))))
        except ConfigError as exc:
            results[(kb, T, seed)] = {"status": "error", "error": str(exc)}
    if args.jobs > 1 and len(payloads) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            outcomes = list(pool.map(_cell_worker, [p for _, p in payloads]))
    else:
        outcomes = [_cell_worker(p) for _, p in payloads]
    results.update({key: res for (key, _), res in zip(payloads, outcomes)})

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SWEEP_HEADER)
    for (kb, T), group in itertools.groupby(cells, key=lambda c: (c[0], c[1])):
        keys = list(group)
        finals = [results[k]["final_loss_gap"] for k in keys if results[k]["status"] == "ok"]
        failed = ";".join(f"seed={k[2]}:{results[k]['status']}" for k in keys if results[k]["status"] != "ok")
        stats = [repr(float(np.mean(finals))), repr(min(finals)), repr(max(finals))] if finals else ["", "", ""]
        writer.writerow([kb, T, len(keys), len(finals), *stats, failed])
    out.mkdir(parents=True, exist_ok=True)
    (out / "sweep.csv").write_text(buf.getvalue(), encoding="utf-8")

    ok = sum(r["status"] == "ok" for r in results.values())
    for key, res in sorted(results.items()):
        if res["status"] != "ok":
            print(f"cell K_bar={key[0]} T={key[1]} seed={key[2]}: {res['status']}: {res['error']}", file=sys.stderr)
    print(f"wrote {out / 'sweep.csv'}: {ok}/{len(cells)} cells succeeded")
    if ok:
        return EXIT_OK
    return EXIT_DIVERGED if any(r["status"] == "diverged" for r in results.values()) else EXIT_CONFIG


def cmd_verify(args) -> int:
    checks = run_suite(args.suite, echo=print)
    failed = sum(not c.passed for c in checks)
    print(f"{len(checks) - failed}/{len(checks)} checks passed")
    return EXIT_CHECK_FAILED if failed else EXIT_OK


def cmd_cost(args) -> int:
    if args.exhaustive_gd_check:
        holds, checked, failures = gd_cycling_sweep()
        print(f"GD cycling never beats K_bar=1 (exhaustive, M <= 60, {checked} cases): holds: {str(holds).lower()}")
        for f in failures[:10]:
            print(f"  failure: M={f[0]} N={f[1]} K_bar={f[2]}")
        if args.M is None:
            return EXIT_OK
    missing = [name for name in ("M", "N", "K_bar") if getattr(args, name) is None]
    if missing:
        print(f"error: missing --{', --'.join(m.replace('_', '-') for m in missing)}", file=sys.stderr)
        return EXIT_CONFIG
    M, N, K_bar = args.M, args.N, args.K_bar
    if K_bar < 1 or N < 1 or M % K_bar:
        print(f"error: K_bar={K_bar} must divide M={M}", file=sys.stderr)
        return EXIT_CONFIG
    if N > M // K_bar:
        print(f"error: N={N} exceeds the group size M/K_bar={M // K_bar}", file=sys.stderr)
        return EXIT_CONFIG
    if args.eps <= 0 or args.tau < 1 or args.B < 1:
        print("error: need eps > 0, tau >= 1 and B >= 1", file=sys.stderr)
        return EXIT_CONFIG
    nu = args.nu if args.nu is not None else args.gamma + args.alpha
    if K_bar * N != M:
        print(f"cost (eps={args.eps:g}, c={args.c:g}; K_bar != M/N, full-group comparisons skipped)")
        print(f"  GD@K_bar   {float(cost_gd(args.eps, args.c, M, K_bar, N, args.gamma)):.6g}")
        print(f"  GD@1       {float(cost_gd(args.eps, args.c, M, 1, N, args.gamma)):.6g}")
        print(f"  SGD@K_bar  {float(cost_sgd(args.eps, args.c, M, K_bar, N, args.gamma, args.sigma2, args.tau)):.6g}")
        print(f"  SGD@1      {float(cost_sgd(args.eps, args.c, M, 1, N, args.gamma, args.sigma2, args.tau)):.6g}")
        return EXIT_OK
    report = cost_ssgd_vs_alternatives(args.eps, args.c, M, K_bar, N, args.B, args.gamma, args.alpha, nu, args.nu_bar, args.mu, args.kappa, args.sigma2, args.tau)
    print(report.to_text())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cycfed", description="Cyclic client participation simulator and analysis tools.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", required=True, help="TOML experiment config")
        p.add_argument("--out", help="output directory (default: output.directory, then $CYCFED_OUT, then ./cycfed-out)")
        p.add_argument("--seed", type=int, help="override run.seed")
        p.add_argument("--jobs", type=int, default=1, help="parallel sweep cells")

    p_run = sub.add_parser("run", help="execute one run")
    common(p_run)
    p_run.set_defaults(func=cmd_run)

    p_sweep = sub.add_parser("sweep", help="Cartesian sweep over K_bar, T and seeds")
    common(p_sweep)
    p_sweep.set_defaults(func=cmd_sweep)

    p_verify = sub.add_parser("verify", help="run a verification suite")
    p_verify.add_argument("suite", nargs="?", default="all", choices=SUITE_NAMES)
    p_verify.set_defaults(func=cmd_verify)

    p_cost = sub.add_parser("cost", help="evaluate the cost models and regime verdicts")
    p_cost.add_argument("--M", type=int)
    p_cost.add_argument("--N", type=int)
    p_cost.add_argument("--K-bar", dest="K_bar", type=int)
    p_cost.add_argument("--B", type=int, default=1)
    p_cost.add_argument("--gamma", type=float, default=0.0)
    p_cost.add_argument("--alpha", type=float, default=0.0)
    p_cost.add_argument("--nu", type=float, help="default: gamma + alpha")
    p_cost.add_argument("--nu-bar", dest="nu_bar", type=float, default=0.0)
    p_cost.add_argument("--sigma2", type=float, default=0.0)
    p_cost.add_argument("--tau", type=int, default=1)
    p_cost.add_argument("--eps", type=float, default=0.1)
    p_cost.add_argument("--c", type=float, default=1.0)
    p_cost.add_argument("--mu", type=float)
    p_cost.add_argument("--kappa", type=float)
    p_cost.add_argument("--exhaustive-gd-check", action="store_true", help="exhaustive M <= 60 check that GD cycling never beats K_bar=1")
    p_cost.set_defaults(func=cmd_cost)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "jobs", 1) < 1:
        parser.error("--jobs must be >= 1")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())

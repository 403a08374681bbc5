"""Self-configuring verification suites with fixed desk-scale parameters.

Each check returns a :class:`Check` holding the measured values, so callers
(the CLI and the acceptance tests) can apply or re-apply the thresholds.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Callable

import numpy as np

from .analysis import (
    gd_cycling_sweep,
    sgd_cycling_grid,
    ssgd_vs_rr_grid,
    cycle_expectation_check,
    decompose_cycle,
    expected_loss_gap,
    fit_rate,
    sign_changes_per_cycle,
    wor_variance_check,
)
from .engine import RunConfig, run, theoretical_step_size
from .fed_datasets import make_classification_population
from .quadratic_lab import make_population, random_population


@dataclass
class Check:
    criterion: int
    name: str
    passed: bool
    requirement: str
    measured: dict[str, Any] = field(default_factory=dict)
    elapsed: float = 0.0

    def line(self) -> str:
        vals = ", ".join(f"{k}={_fmt(v)}" for k, v in self.measured.items())
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.criterion:>2} {self.name}: {vals} (require {self.requirement}; {self.elapsed:.2f}s)"


def _fmt(v: Any) -> str:
    if isinstance(v, float):
        return f"{v:.4g}"
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_fmt(x) for x in v) + "]"
    return str(v)


def _timed(fn: Callable[[], Check]) -> Check:
    start = time.perf_counter()
    check = fn()
    check.elapsed = time.perf_counter() - start
    return check


# 1-2: cycle decomposition


def check_cycle_decomposition(configs: int = 20, seed: int = 2024) -> Check:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for c in range(configs):
        d = int(rng.choice([2, 3, 5]))
        M = int(rng.choice([6, 12]))
        K_bar = int(rng.choice([2, 3]))
        N = int(rng.choice([1, 2]))
        pop = random_population(d, M, K_bar, seed=seed + c)
        w0 = rng.standard_normal(d)
        selected = [sorted(rng.choice(g, size=N, replace=False).tolist()) for g in pop.groups]
        eta = 0.5 / (N * 2.0)
        dec = decompose_cycle(pop, w0, selected, eta)
        rel = dec.residual_norm / max(float(np.linalg.norm(dec.actual_delta)), 1e-300)
        worst = max(worst, rel)
    return Check(1, "cycle decomposition", worst <= 1e-9, "max relative residual <= 1e-9", {"configs": configs, "max_rel_residual": worst})


def check_cycle_expectation(seed: int = 7) -> Check:
    pop = random_population(3, 6, 3, seed=seed)
    w0 = np.random.default_rng(seed).standard_normal(3)
    res = cycle_expectation_check(pop, w0, n=1, eta_sum=0.2)
    return Check(2, "cycle expectation", res.residual_norm <= 1e-10 and res.outcomes == 8, "8 outcomes, residual <= 1e-10", {"outcomes": res.outcomes, "residual": res.residual_norm})


# 3: without-replacement variance

WOR_CASES = ((4, 2), (5, 3), (6, 2), (8, 4))


def check_wor(seed: int = 11) -> Check:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for K, N in WOR_CASES:
        lhs, rhs = wor_variance_check(rng.standard_normal((K, 3)), N)
        worst = max(worst, abs(lhs - rhs) / rhs)
    return Check(3, "WOR variance identity", worst <= 1e-12, "relative |lhs - rhs| <= 1e-12", {"cases": len(WOR_CASES), "max_rel_error": worst})


# 4-5: reductions and exponential convergence


def check_reductions(rounds: int = 50) -> Check:
    spectrum = (1.0, 2.0, 3.0, 4.0, 5.0)
    gd_pop = make_population(5, 6, 3, 1, 0.5, 0.3, 0.0, spectrum, seed=5)
    comp_pop = make_population(5, 6, 3, 4, 0.5, 0.3, 0.4, spectrum, seed=5)
    K = rounds // 3 + (rounds % 3 > 0)

    def traj(pop, mode, tau=1, b=1):
        log = run(RunConfig(pop, mode, eta=0.1, K=K, N=1, tau=tau, minibatch=b, seed=3, record_iterates=True))
        return np.array(log.iterates[: rounds + 1])

    ssgd_eq = bool(np.array_equal(traj(gd_pop, "SSGD"), traj(gd_pop, "GD")))
    sgd_eq = bool(np.array_equal(traj(comp_pop, "SGD", tau=1, b=4), traj(comp_pop, "GD")))
    return Check(4, "reduction chain", ssgd_eq and sgd_eq, "bitwise-equal iterates", {"rounds": rounds, "SSGD(B=1)==GD": ssgd_eq, "SGD(tau=1,full)==GD": sgd_eq})


def check_exponential(rounds: int = 50, eta: float = 0.1) -> Check:
    pop = make_population(4, 6, 1, 1, 0.5, 0.0, 0.0, (1.0, 9.5, 10.0, 10.5), seed=4)
    log = run(RunConfig(pop, "GD", eta=eta, K=rounds, N=6, seed=0))
    gaps = log.loss_gaps
    # exact per-round map with N = M: e' = (I - eta H) e, so the gap contracts by rho^2
    rho = float(np.max(np.abs(1 - eta * np.linalg.eigvalsh(pop.mean_hessian))))
    ratios = gaps[5:] / gaps[4:-1]
    err = float(np.max(np.abs(ratios - rho**2)))
    return Check(5, "exponential convergence (K_bar=1, N=M)", err <= 1e-8, "|ratio - rho^2| <= 1e-8 after round 5", {"rho^2": rho**2, "max_abs_error": err})


# 6 and 10: rate exponents

HORIZONS = (192, 384, 768, 1536, 3072)
RATE_SPECTRUM = (1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0, 4.0)


def _gd_family(gamma: float, alpha: float, K_bar: int, exact_expectation: bool) -> list[float]:
    M, N = 12, 2
    pop = make_population(8, M, K_bar, 1, gamma, alpha, 0.0, RATE_SPECTRUM, seed=1)
    out = []
    for T in HORIZONS:
        eta = theoretical_step_size("GD", pop.constants, M, K_bar, N, T=T).eta_local
        if exact_expectation:
            out.append(float(expected_loss_gap(pop, "GD", eta, T // K_bar, N)[-1]))
        else:
            out.append(run(RunConfig(pop, "GD", eta=eta, K=T // K_bar, N=N, seed=0)).records[-1].loss_gap)
    return out


def check_rate_separation() -> Check:
    a = fit_rate(list(zip(HORIZONS, _gd_family(0.0, 0.3, 3, exact_expectation=False)))).slope
    b = fit_rate(list(zip(HORIZONS, _gd_family(0.5, 0.0, 3, exact_expectation=True)))).slope
    c = fit_rate(list(zip(HORIZONS, _gd_family(0.5, 0.0, 6, exact_expectation=False)))).slope
    ok = a <= -1.7 and -1.35 <= b <= -0.65 and c <= -1.7
    return Check(6, "rate separation", ok, "(a) <= -1.7, (b) in [-1.35, -0.65], (c) <= -1.7", {"slope_a": a, "slope_b": b, "slope_c": c})


SGD_SETUP = {"d": 32, "M": 4, "K_bar": 2, "N": 2, "B": 64, "tau": 2, "nu_bar": 0.5, "seed": 3}


def check_sgd_variance(seeds: int = 5, T_fixed: int = 768) -> Check:
    s = SGD_SETUP
    pop = make_population(s["d"], s["M"], s["K_bar"], s["B"], 0.0, 0.0, s["nu_bar"], np.linspace(1, 4, s["d"]), seed=s["seed"])
    gaps = []
    for T in HORIZONS:
        eta = theoretical_step_size("SGD", pop.constants, s["M"], s["K_bar"], s["N"], tau=s["tau"], T=T).eta_local
        gaps.append(float(expected_loss_gap(pop, "SGD", eta, T // s["K_bar"], s["N"], s["tau"], 1)[-1]))
    slope = fit_rate(list(zip(HORIZONS, gaps))).slope
    eta = theoretical_step_size("SGD", pop.constants, s["M"], s["K_bar"], s["N"], tau=s["tau"], T=T_fixed).eta_local
    wins = 0
    for seed in range(seeds):
        final = [run(RunConfig(pop, "SGD", eta=eta, K=T_fixed // s["K_bar"], N=s["N"], tau=s["tau"], minibatch=b, seed=seed)).records[-1].loss_gap for b in (1, 2)]
        wins += final[1] < final[0]
    ok = -1.35 <= slope <= -0.65 and wins >= math.ceil(0.8 * seeds)
    return Check(10, "SGD variance effect", ok, "slope in [-1.35, -0.65], doubled minibatch wins >= 4/5", {"slope": slope, "wins": f"{wins}/{seeds}"})


# 7-9: cost orderings


def check_gd_cycling() -> Check:
    holds, checked, failures = gd_cycling_sweep(60, Fraction(1), Fraction(1, 10), Fraction(1))
    return Check(7, "GD cycling never beats K_bar=1", holds, "all cases hold (exact arithmetic)", {"cases": checked, "failures": len(failures)})


def check_sgd_cycling() -> Check:
    passed, total = sgd_cycling_grid(1000, seed=0)
    return Check(8, "SGD cycling at N=M/K_bar", passed == total, "100% of grid points", {"passed": f"{passed}/{total}"})


def check_ssgd_vs_rr() -> Check:
    passed, total = ssgd_vs_rr_grid(1000, seed=0)
    return Check(9, "SSGD beats local RR", passed == total, "100% of grid points", {"passed": f"{passed}/{total}"})


# 11-12: logistic track

QUALITATIVE = {"C": 4, "d": 5, "n": 1000, "separation": 3.0, "M": 20, "N": 2, "l2": 0.01}


def _logistic_final(concentration: float, K_bar: int, seed: int, eta: float, T: int):
    q = QUALITATIVE
    pop = make_classification_population(q["C"], q["d"], q["n"], q["separation"], q["M"], concentration, 1, K_bar, "label-sorted", q["l2"], seed)
    return run(RunConfig(pop, "GD", eta=eta, K=T // K_bar, N=q["N"], seed=seed))


def check_qualitative(seeds: int = 5, eta: float = 0.1, T: int = 600) -> Check:
    improvement = {}
    wins = {}
    for conc in (0.5, 2.0):
        diffs = []
        for seed in range(seeds):
            base = _logistic_final(conc, 1, seed, eta, T).records[-1].loss_gap
            cyc = _logistic_final(conc, 10, seed, eta, T).records[-1].loss_gap
            diffs.append(base - cyc)
        improvement[conc] = float(np.mean(diffs))
        wins[conc] = sum(d > 0 for d in diffs)
    ok = wins[0.5] >= math.ceil(0.8 * seeds) and improvement[0.5] > improvement[2.0]
    return Check(
        11,
        "cycling helps more under heterogeneity",
        ok,
        "K_bar=10 wins >= 4/5 at concentration 0.5; mean improvement larger at 0.5 than 2.0",
        {"wins@0.5": f"{wins[0.5]}/{seeds}", "mean_gain@0.5": improvement[0.5], "mean_gain@2.0": improvement[2.0]},
    )


def check_oscillation(seeds: int = 5, eta: float = 1.0, T: int = 300, concentration: float = 0.2) -> Check:
    K_bar = QUALITATIVE["M"] // QUALITATIVE["N"]
    cyc, base = [], []
    for seed in range(seeds):
        cyc.append(sign_changes_per_cycle(_logistic_final(concentration, K_bar, seed, eta, T).loss_gaps, K_bar))
        base.append(sign_changes_per_cycle(_logistic_final(concentration, 1, seed, eta, T).loss_gaps, K_bar))
    mc, mb = float(np.mean(cyc)), float(np.mean(base))
    ok = mc >= K_bar / 2 and mb < mc
    return Check(12, "within-cycle oscillation", ok, f"K_bar={K_bar} >= {K_bar / 2:g} changes per cycle and K_bar=1 fewer", {"changes@K_bar": mc, "changes@1": mb})


SUITES: dict[str, list[Callable[[], Check]]] = {
    "decomposition": [check_cycle_decomposition, check_cycle_expectation],
    "wor": [check_wor],
    "reductions": [check_reductions, check_exponential],
    "costs": [check_gd_cycling, check_sgd_cycling, check_ssgd_vs_rr],
    "rates": [check_rate_separation, check_sgd_variance],
    "qualitative": [check_qualitative, check_oscillation],
}
SUITE_NAMES = (*SUITES, "all")


def run_suite(name: str, echo: Callable[[str], None] | None = None) -> list[Check]:
    if name == "all":
        fns = [fn for group in SUITES.values() for fn in group]
    elif name in SUITES:
        fns = SUITES[name]
    else:
        raise ValueError(f"unknown suite {name!r}; choose from {', '.join(SUITE_NAMES)}")
    results = []
    for fn in fns:
        check = _timed(fn)
        if echo is not None:
            echo(check.line())
        results.append(check)
    return results

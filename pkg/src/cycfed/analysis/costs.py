"""Dominant-term cost models and the regime comparisons built on them.

All costs are expressed up to a shared constant, with ``c_unit`` as the only
proportionality knob, so every comparison is made at equal constants. The
functions avoid ``float()`` coercions so they also accept ``Fraction`` inputs
for exact arithmetic (except where a square root is required).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any

import numpy as np


def finite_population_factor(M, K_bar, N):
    """``(M/K_bar - N) / (M/K_bar - 1)``, taken as 0 when ``N == M/K_bar``."""
    if M % K_bar:
        raise ValueError(f"K_bar={K_bar} must divide M={M}")
    g = M // K_bar
    if N > g:
        raise ValueError(f"N={N} exceeds the group size M/K_bar={g}")
    if N < 1:
        raise ValueError("N must be >= 1")
    if N == g:
        return 0
    return Fraction(g - N, g - 1)


def cost_gd(eps, c_unit, M: int, K_bar: int, N: int, gamma):
    """Cost to reach ``eps`` with local GD: ``c K_bar gamma^2 / (eps N) * fpc``."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    fpc = finite_population_factor(M, K_bar, N)
    return c_unit * K_bar * gamma**2 / (eps * N) * fpc


def cost_sgd(eps, c_unit, M: int, K_bar: int, N: int, gamma, sigma2, tau: int):
    """Cost with local SGD: the GD term plus ``c sigma^2 K_bar / (eps N tau)``."""
    if tau < 1:
        raise ValueError("tau must be >= 1")
    return cost_gd(eps, c_unit, M, K_bar, N, gamma) + c_unit * sigma2 * K_bar / (eps * N * tau)


def cost_gd_full_group(eps, c_unit, M: int, K_bar: int, alpha) -> float:
    """Cost of local GD at ``K_bar = M/N``: ``c / sqrt(eps) * (K_bar/sqrt(M) + K_bar alpha)``."""
    return c_unit / math.sqrt(eps) * (K_bar / math.sqrt(M) + K_bar * alpha)


def cost_ssgd_full_group(eps, c_unit, M: int, K_bar: int, B: int, alpha, nu, nu_bar) -> float:
    """Cost of local shuffled SGD at ``K_bar = M/N``."""
    return c_unit / math.sqrt(eps) * (K_bar / math.sqrt(M * B) + nu + K_bar * alpha + nu_bar / math.sqrt(B))


def cost_local_rr(eps, c_unit, M: int, K_bar: int, B: int, nu, nu_bar) -> float:
    """Cost of full-participation local random reshuffling (K_bar times the per-round cost)."""
    return K_bar * c_unit / math.sqrt(eps) * (1 / math.sqrt(M * B) + nu + nu_bar / math.sqrt(B))


def ssgd_beats_gd_predicate(B: int, nu, nu_bar) -> bool:
    """``1 - 1/sqrt(B) - nu - nu_bar/sqrt(B) > 0`` with ``B > 1``."""
    return B > 1 and 1 - 1 / math.sqrt(B) - nu - nu_bar / math.sqrt(B) > 0


def local_rr_threshold(N: int, B: int, gamma, alpha, nu_bar) -> float:
    """Smallest ``M`` (exclusive) for which shuffled SGD beats local RR: ``N (1 + alpha / (gamma + nu_bar/sqrt(B))``."""
    denom = gamma + nu_bar / math.sqrt(B)
    if denom == 0:
        return math.inf if alpha > 0 else float(N)
    return N * (1 + alpha / denom)


@dataclass
class Verdict:
    comparison: str
    holds: bool
    reference: str
    inputs: dict[str, Any] = field(default_factory=dict)


@dataclass
class CostReport:
    c_unit: float
    epsilon: float
    costs: dict[str, float]
    verdicts: list[Verdict]
    degenerate: bool = False

    def to_text(self) -> str:
        lines = [f"cost report (eps={self.epsilon:g}, c={self.c_unit:g})"]
        width = max(len(k) for k in self.costs)
        for name, value in self.costs.items():
            lines.append(f"  {name:<{width}}  {value:.6g}")
        if self.degenerate:
            lines.append("  note: B=1, shuffled SGD coincides with GD; the SSGD comparison is degenerate")
        for v in self.verdicts:
            args = ", ".join(f"{k}={val:g}" if isinstance(val, float) else f"{k}={val}" for k, val in v.inputs.items())
            detail = f"{v.reference}; {args}" if args else v.reference
            lines.append(f"  [{'true' if v.holds else 'false'}] {v.comparison} ({detail})")
        return "\n".join(lines)

    def csv_row(self) -> dict[str, Any]:
        row: dict[str, Any] = {"eps": self.epsilon, "c_unit": self.c_unit}
        row.update({f"cost[{k}]": v for k, v in self.costs.items()})
        row.update({v.comparison: v.holds for v in self.verdicts})
        return row


def cost_ssgd_vs_alternatives(
    eps: float,
    c_unit: float,
    M: int,
    K_bar: int,
    N: int,
    B: int,
    gamma: float,
    alpha: float,
    nu: float,
    nu_bar: float,
    mu: float | None = None,
    kappa: float | None = None,
    sigma2: float = 0.0,
    tau: int = 1,
) -> CostReport:
    """Evaluate every cost model at ``K_bar = M/N`` and the regime verdicts.

    ``mu`` and ``kappa`` are recorded in the verdict inputs only: all costs are
    compared at one shared constant.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if K_bar * N != M:
        raise ValueError(f"the full-group comparisons need K_bar = M/N, got K_bar={K_bar}, M={M}, N={N}")
    costs = {
        "GD@K_bar": float(cost_gd(eps, c_unit, M, K_bar, N, gamma)),
        "GD@1": float(cost_gd(eps, c_unit, M, 1, N, gamma)),
        "SGD@K_bar": float(cost_sgd(eps, c_unit, M, K_bar, N, gamma, sigma2, tau)),
        "SGD@1": float(cost_sgd(eps, c_unit, M, 1, N, gamma, sigma2, tau)),
        "GD@K_bar(1/T^2)": cost_gd_full_group(eps, c_unit, M, K_bar, alpha),
        "SSGD@K_bar": cost_ssgd_full_group(eps, c_unit, M, K_bar, B, alpha, nu, nu_bar),
        "LocalRR": cost_local_rr(eps, c_unit, M, K_bar, B, nu, nu_bar),
    }
    extra = {"mu": mu, "kappa": kappa} if mu is not None or kappa is not None else {}
    threshold = local_rr_threshold(N, B, gamma, alpha, nu_bar)
    sgd_condition = gamma**2 >= M * sigma2 / (N * tau)
    verdicts = [
        Verdict("GD cost vanishes at K_bar=M/N", costs["GD@K_bar"] == 0, "necessity of K_bar=M/N", {"M": M, "N": N, "K_bar": K_bar}),
        Verdict(
            "SGD cycling no costlier than K_bar=1",
            costs["SGD@K_bar"] <= costs["SGD@1"],
            "N=M/K_bar with gamma^2 >= M sigma^2/(N tau)",
            {"condition": sgd_condition, "gamma": gamma, "sigma2": sigma2, "tau": tau, **extra},
        ),
        Verdict(
            "SSGD beats GD (predicate)",
            ssgd_beats_gd_predicate(B, nu, nu_bar),
            "1 - 1/sqrt(B) - nu - nu_bar/sqrt(B) > 0, B > 1",
            {"B": B, "nu": nu, "nu_bar": nu_bar},
        ),
        Verdict("SSGD cheaper than GD (numeric)", costs["SSGD@K_bar"] < costs["GD@K_bar(1/T^2)"], "full-group cost models", {}),
        Verdict(
            "SSGD beats LocalRR (threshold)",
            M > threshold,
            "M > N(1 + alpha/(gamma + nu_bar/sqrt(B)))",
            {"M": M, "threshold": float(threshold)},
        ),
        Verdict("SSGD cheaper than LocalRR (numeric)", costs["SSGD@K_bar"] < costs["LocalRR"], "full-group cost models", {}),
    ]
    return CostReport(c_unit=c_unit, epsilon=eps, costs=costs, verdicts=verdicts, degenerate=B == 1)


def gd_cycling_sweep(
    max_M: int = 60,
    gamma=Fraction(1),
    eps=Fraction(1, 10),
    c_unit=Fraction(1),
    require_divisible: bool = True,
) -> tuple[bool, int, list[tuple[int, int, int]]]:
    """Exhaustive exact check that intermediate cycling never beats ``K_bar = 1``.

    Covers every ``M <= max_M``, ``N >= 2`` and divisor ``K_bar`` of ``M`` with
    ``1 < K_bar < M/N``; also checks that the cost is zero at ``K_bar = M/N``.
    With ``require_divisible`` only pairs where ``N`` divides ``M`` (so that
    ``K_bar = M/N`` is an admissible group count) are swept; without it the
    ordering fails near ``K_bar ~ M/N``, e.g. ``(M, N, K_bar) = (8, 3, 2)``.
    Returns ``(holds, cases_checked, failures)``.
    """
    failures = []
    checked = 0
    for M in range(2, max_M + 1):
        for N in range(2, M + 1):
            if require_divisible and M % N:
                continue
            base = cost_gd(eps, c_unit, M, 1, N, gamma)
            for K_bar in range(2, M + 1):
                if M % K_bar:
                    continue
                g = M // K_bar
                if g > N:
                    checked += 1
                    if not cost_gd(eps, c_unit, M, K_bar, N, gamma) > base:
                        failures.append((M, N, K_bar))
                elif g == N:
                    checked += 1
                    if cost_gd(eps, c_unit, M, K_bar, N, gamma) != 0:
                        failures.append((M, N, K_bar))
    return not failures, checked, failures


def sgd_cycling_grid(points: int = 1000, seed: int = 0) -> tuple[int, int]:
    """Random check of the local-SGD cost ordering when ``N = M/K_bar``.

    Samples points satisfying ``gamma^2 >= M sigma^2 / (N tau)``; returns
    ``(passed, total)``.
    """
    rng = np.random.default_rng(seed)
    passed = 0
    for _ in range(points):
        N = int(rng.integers(1, 11))
        K_bar = int(rng.integers(1, 21))
        M = N * K_bar
        tau = int(rng.integers(1, 51))
        sigma2 = float(rng.uniform(0, 5))
        eps = float(rng.uniform(1e-3, 1))
        c = float(rng.uniform(0.1, 10))
        gamma = math.sqrt(M * sigma2 / (N * tau) * (1 + rng.uniform(0, 3)))
        lhs = cost_sgd(eps, c, M, K_bar, N, gamma, sigma2, tau)
        rhs = cost_sgd(eps, c, M, 1, N, gamma, sigma2, tau)
        passed += bool(lhs <= rhs)
    return passed, points


def ssgd_vs_rr_grid(points: int = 1000, seed: int = 0) -> tuple[int, int]:
    """Random check that shuffled SGD at ``K_bar = M/N`` is cheaper than local RR.

    Points satisfy ``M > N(1 + alpha/(gamma + nu_bar/sqrt(B)))`` and use the
    tight heterogeneity bound ``nu = gamma + alpha``. Returns ``(passed, total)``.
    """
    rng = np.random.default_rng(seed)
    passed = 0
    for _ in range(points):
        N = int(rng.integers(1, 11))
        B = int(rng.integers(1, 65))
        gamma = float(rng.uniform(0.01, 2))
        alpha = float(rng.uniform(0, 2))
        nu_bar = float(rng.uniform(0, 2))
        nu = gamma + alpha
        threshold = local_rr_threshold(N, B, gamma, alpha, nu_bar)
        K_min = math.floor(threshold / N) + 1
        K_bar = int(rng.integers(max(K_min, 2), max(K_min, 2) + 30))
        M = K_bar * N
        eps = float(rng.uniform(1e-3, 1))
        c = float(rng.uniform(0.1, 10))
        ssgd = cost_ssgd_full_group(eps, c, M, K_bar, B, alpha, nu, nu_bar)
        rr = cost_local_rr(eps, c, M, K_bar, B, nu, nu_bar)
        passed += bool(M > threshold and ssgd < rr)
    return passed, points

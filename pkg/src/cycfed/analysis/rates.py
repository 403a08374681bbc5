"""Empirical rate exponents and heterogeneity estimates."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np


@dataclass(frozen=True)
class RateFit:
    window: list[tuple[float, float]]
    slope: float
    intercept: float
    r2: float
    excluded: list[tuple[float, float]] = field(default_factory=list)

    @property
    def flagged(self) -> bool:
        return bool(self.excluded)


def fit_rate(runs: Sequence[tuple[float, float]], burn_in: float = 0.25) -> RateFit:
    """Least-squares slope of ``log(error)`` against ``log(T)``.

    The smallest ``floor(burn_in * n)`` horizons are dropped, as long as four
    points remain. Non-positive errors are excluded and reported in
    ``excluded``.
    """
    pts = sorted((float(t), float(e)) for t, e in runs)
    if len({t for t, _ in pts}) != len(pts):
        raise ValueError("horizons must be distinct")
    excluded = [(t, e) for t, e in pts if not (e > 0 and math.isfinite(e))]
    pts = [(t, e) for t, e in pts if e > 0 and math.isfinite(e)]
    drop = min(int(burn_in * len(pts)), max(len(pts) - 4, 0))
    window = pts[drop:]
    if len(window) < 4:
        raise ValueError(f"need at least 4 usable points, got {len(window)}")
    if window[-1][0] < 8 * window[0][0]:
        raise ValueError("horizons must span at least a factor of 8")
    x = np.log([t for t, _ in window])
    y = np.log([e for _, e in window])
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    return RateFit(window, float(slope), float(intercept), r2, excluded)


def estimate_heterogeneity(pop: Any, probes: Sequence[np.ndarray], groups: Sequence[Sequence[int]] | None = None) -> tuple[float, float, float, float]:
    """Empirical ``(gamma, alpha, nu, nu_bar)`` maxima over ``probes``.

    Works with any population exposing ``client_gradient``,
    ``component_gradient`` and ``num_components``. Each value is a lower bound
    on the corresponding supremum over all ``w``.
    """
    if len(probes) < 5:
        raise ValueError("at least 5 probe points are required")
    groups = pop.groups if groups is None else groups
    gamma = alpha = nu = nu_bar = 0.0
    for w in probes:
        w = np.asarray(w, dtype=float)
        grads = np.array([pop.client_gradient(m, w) for m in range(pop.num_clients)])
        glob = grads.mean(axis=0)
        nu = max(nu, float(np.linalg.norm(grads - glob, axis=1).max()))
        for g in groups:
            g = list(g)
            gm = grads[g].mean(axis=0)
            gamma = max(gamma, float(np.linalg.norm(grads[g] - gm, axis=1).max()))
            alpha = max(alpha, float(np.linalg.norm(gm - glob)))
        for m in range(pop.num_clients):
            comp = np.array([pop.component_gradient(m, l, w) for l in range(pop.num_components(m))])
            nu_bar = max(nu_bar, float(np.linalg.norm(comp - grads[m], axis=1).max()))
    return gamma, alpha, nu, nu_bar


def sign_changes_per_cycle(losses: Sequence[float], window: int, last: int = 5) -> float:
    """Mean count of sign changes of the first difference per window of ``window`` rounds.

    ``losses`` holds one value per round. The last ``last`` windows are used;
    each window also sees the value just before it, so it has ``window``
    differences and at most ``window - 1`` sign changes. Exact zero
    differences carry no sign and are skipped.
    """
    if window < 1 or last < 1:
        raise ValueError("window and last must be positive")
    seq = np.asarray(losses, dtype=float)
    need = last * window + 1
    if len(seq) < need:
        raise ValueError(f"need at least {need} loss values, got {len(seq)}")
    seq = seq[-need:]
    counts = []
    for c in range(last):
        diffs = np.diff(seq[c * window : (c + 1) * window + 1])
        signs = np.sign(diffs[diffs != 0])
        counts.append(int(np.sum(signs[1:] != signs[:-1])))
    return float(np.mean(counts))

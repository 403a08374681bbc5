"""Exact identities checked by enumeration on quadratic populations."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..engine import server_round
from ..quadratic_lab import QuadraticPopulation


@dataclass(frozen=True)
class CycleDecomposition:
    linear_term: np.ndarray
    noise_term: np.ndarray
    reconstructed_delta: np.ndarray
    actual_delta: np.ndarray
    residual_norm: float


def _require_quadratic(pop) -> None:
    if not isinstance(pop, QuadraticPopulation):
        raise TypeError("the cycle identities need a QuadraticPopulation (constant Hessians)")


def cycle_terms(pop: QuadraticPopulation, w0: np.ndarray, selected: Sequence[Sequence[int]], eta_sum: float) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(sum_i q_i, r)`` for one cycle-epoch.

    ``q_i`` is the summed client gradient of round ``i`` at ``w0``, ``S_i`` the
    summed client Hessian, and
    ``r = sum_{i<K_bar} (prod_{j=i+2}^{K_bar} (I - eta S_j)) S_{i+1} sum_{j'<=i} q_j'``
    with the product taken with the largest ``j`` on the left.
    """
    _require_quadratic(pop)
    w0 = np.asarray(w0, dtype=float)
    d = pop.dim
    q = [np.sum([pop.client_gradient(m, w0) for m in s], axis=0) for s in selected]
    S = [np.sum([pop.client_hessian(m) for m in s], axis=0) for s in selected]
    k_bar = len(selected)
    eye = np.eye(d)
    r = np.zeros(d)
    cum = np.zeros(d)
    for i in range(1, k_bar):
        cum = cum + q[i - 1]
        prod = eye
        for j in range(i + 2, k_bar + 1):
            prod = (eye - eta_sum * S[j - 1]) @ prod
        r = r + prod @ (S[i] @ cum)
    return np.sum(q, axis=0), r


def _engine_cycle(pop, w0: np.ndarray, selected: Sequence[Sequence[int]], eta_sum: float) -> np.ndarray:
    w = np.asarray(w0, dtype=float)
    for i, s in enumerate(selected, start=1):
        # mean aggregation with local step N * eta_sum equals the summed update
        w, _ = server_round(pop, w, s, "GD", eta_sum * len(s), 1, i)
    return w


def decompose_cycle(pop: QuadraticPopulation, w0: np.ndarray, selected: Sequence[Sequence[int]], eta_sum: float) -> CycleDecomposition:
    """Compare the closed-form cycle update with the engine's GD trajectory."""
    qsum, r = cycle_terms(pop, w0, selected, eta_sum)
    linear = -eta_sum * qsum
    noise = eta_sum**2 * r
    recon = linear + noise
    actual = _engine_cycle(pop, w0, selected, eta_sum) - np.asarray(w0, dtype=float)
    return CycleDecomposition(linear, noise, recon, actual, float(np.linalg.norm(recon - actual)))


def selection_outcomes(groups: Sequence[Sequence[int]], n: int):
    """All equiprobable selection sequences, one N-subset per group, in order."""
    return itertools.product(*(itertools.combinations(g, n) for g in groups))


@dataclass(frozen=True)
class ExpectationCheck:
    mean_update: np.ndarray
    predicted_update: np.ndarray
    mean_r: np.ndarray
    residual_norm: float
    outcomes: int


def cycle_expectation_check(pop: QuadraticPopulation, w0: np.ndarray, n: int, eta_sum: float, groups: Sequence[Sequence[int]] | None = None) -> ExpectationCheck:
    """Average the cycle update over every selection outcome.

    The predicted mean update is ``-eta K_bar N grad F(w0) + eta^2 E[r]``.
    """
    _require_quadratic(pop)
    groups = pop.groups if groups is None else groups
    w0 = np.asarray(w0, dtype=float)
    ws, rs = [], []
    for sel in selection_outcomes(groups, n):
        ws.append(_engine_cycle(pop, w0, sel, eta_sum))
        rs.append(cycle_terms(pop, w0, sel, eta_sum)[1])
    mean_w = np.mean(ws, axis=0)
    mean_r = np.mean(rs, axis=0)
    predicted = -eta_sum * len(groups) * n * pop.gradient(w0) + eta_sum**2 * mean_r
    mean_update = mean_w - w0
    return ExpectationCheck(mean_update, predicted, mean_r, float(np.linalg.norm(mean_update - predicted)), len(ws))


ENUMERATION_LIMIT = 10**6


def wor_variance_check(vectors: Sequence[np.ndarray], n: int) -> tuple[float, float]:
    """Enumerated vs closed-form variance of a without-replacement sample mean.

    ``lhs`` averages ``||mean(sample) - mean(all)||^2`` over all ``C(K, n)``
    subsets; ``rhs = (K - n) / (n K (K - 1)) * sum_k ||x_k - mean||^2``.
    """
    x = np.atleast_2d(np.asarray(vectors, dtype=float))
    k = x.shape[0]
    if not 1 <= n <= k:
        raise ValueError(f"sample size {n} outside 1..{k}")
    if math.comb(k, n) > ENUMERATION_LIMIT:
        raise ValueError(f"C({k}, {n}) exceeds the enumeration limit {ENUMERATION_LIMIT}")
    xbar = x.mean(axis=0)
    sq = [float(np.sum((x[list(s)].mean(axis=0) - xbar) ** 2)) for s in itertools.combinations(range(k), n)]
    lhs = math.fsum(sq) / len(sq)
    if k == 1:
        return lhs, 0.0
    rhs = (k - n) / (n * k * (k - 1)) * math.fsum(float(v) for v in np.sum((x - xbar) ** 2, axis=1))
    return lhs, rhs


def expected_loss_gap(
    pop: QuadraticPopulation,
    mode: str,
    eta: float,
    K: int,
    N: int,
    tau: int = 1,
    minibatch: int = 1,
    w0: np.ndarray | None = None,
    groups: Sequence[Sequence[int]] | None = None,
) -> np.ndarray:
    """Expected loss gap after every round, by exact moment propagation.

    Valid for shared-Hessian populations in GD and SGD modes, where each round
    is an affine map of the global model plus zero-mean noise from client
    subsampling and minibatch draws. Returns an array of length ``K * K_bar``.
    """
    _require_quadratic(pop)
    if not pop.shared_hessian_flag:
        raise ValueError("moment propagation needs a shared Hessian")
    if mode not in ("GD", "SGD"):
        raise ValueError("moment propagation covers GD and SGD modes")
    groups = pop.groups if groups is None else groups
    if mode == "GD":
        tau, minibatch = 1, pop.B
    d = pop.dim
    H = pop.client_hessian(0)
    A = np.eye(d) - eta * H
    A_tau = np.linalg.matrix_power(A, tau)
    powers = [np.linalg.matrix_power(A, s) for s in range(tau)]
    P = np.sum(powers, axis=0)
    B = pop.B
    factor_mb = 0.0 if minibatch >= B else (B - minibatch) / (minibatch * (B - 1))

    group_terms = []
    for g in groups:
        g = list(g)
        b = pop.client_linears[g]
        bg = b.mean(axis=0)
        size = len(g)
        dev = b - bg
        sel_cov = (size - N) / (N * size * (size - 1)) * dev.T @ dev if size > 1 else np.zeros((d, d))
        mb_cov = np.zeros((d, d))
        if factor_mb > 0:
            for m in g:
                cdev = pop.linears[m] - pop.client_linears[m]
                C = factor_mb * cdev.T @ cdev / B
                mb_cov += eta**2 * sum(p @ C @ p.T for p in powers)
            mb_cov /= N * size
        noise = eta**2 * P @ sel_cov @ P.T + mb_cov
        group_terms.append((eta * P @ bg, noise))

    mean = np.zeros(d) if w0 is None else np.asarray(w0, dtype=float).copy()
    cov = np.zeros((d, d))
    w_star = pop.constants.w_star
    Hbar = pop.mean_hessian
    gaps = []
    for _ in range(K):
        for shift, noise in group_terms:
            mean = A_tau @ mean + shift
            cov = A_tau @ cov @ A_tau.T + noise
            e = mean - w_star
            gaps.append(0.5 * float(np.trace(Hbar @ cov)) + 0.5 * float(e @ Hbar @ e))
    return np.array(gaps)

"""Synthetic classification data, Dirichlet label partitioning and logistic client losses."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import minimize
from scipy.special import log_softmax, softmax

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LabeledDataset:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        if not np.all(np.isfinite(self.features)):
            raise ValueError("features contain non-finite values")
        present = np.unique(self.labels)
        if len(present) != self.num_classes:
            raise ValueError("every class must appear at least once")

    @property
    def n(self) -> int:
        return len(self.labels)

    @property
    def d(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class ClientShard:
    """Row indices of one client; components are contiguous slices of ``indices``."""

    indices: np.ndarray
    component_boundaries: tuple[int, ...]

    @property
    def B(self) -> int:
        return len(self.component_boundaries) - 1

    def component(self, l: int) -> np.ndarray:
        return self.indices[self.component_boundaries[l] : self.component_boundaries[l + 1]]


def make_gaussian_mixture(C: int, d: int, n: int, separation: float, seed: int) -> LabeledDataset:
    """Sample ``n`` points from ``C`` unit-variance spherical Gaussians.

    Class means sit at pairwise distance ``separation`` (a scaled simplex when
    ``C <= d``, random directions otherwise). Labels are assigned round-robin so
    every class is present; features are standardized per coordinate.
    """
    if C < 2:
        raise ValueError("need at least two classes")
    if n < 10 * C:
        raise ValueError(f"need at least {10 * C} samples for {C} classes")
    rng = np.random.default_rng(seed)
    if C <= d:
        q, _ = np.linalg.qr(rng.standard_normal((d, C)))
        means = separation / np.sqrt(2) * q.T
    else:
        dirs = rng.standard_normal((C, d))
        means = separation / 2 * dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
    labels = rng.permutation(np.arange(n) % C)
    x = means[labels] + rng.standard_normal((n, d))
    x = (x - x.mean(axis=0)) / x.std(axis=0)
    return LabeledDataset(x, labels, C)


def _largest_remainder(weights: np.ndarray, total: int) -> np.ndarray:
    raw = weights * total
    counts = np.floor(raw).astype(int)
    short = total - counts.sum()
    if short:
        order = np.argsort(-(raw - counts), kind="stable")
        counts[order[:short]] += 1
    return counts


def _split_components(rng: np.random.Generator, idx: np.ndarray, B: int) -> ClientShard:
    idx = rng.permutation(idx)
    sizes = [len(part) for part in np.array_split(np.empty(len(idx)), B)]
    return ClientShard(idx, tuple(int(x) for x in np.concatenate([[0], np.cumsum(sizes)])))


def dirichlet_partition(ds: LabeledDataset, M: int, concentration: float, B: int = 1, seed: int = 0) -> list[ClientShard]:
    """Split ``ds`` across ``M`` clients with per-class Dirichlet proportions.

    Each class's samples are divided by largest-remainder rounding of a
    symmetric Dirichlet draw. Draws leaving any client with fewer than ``B``
    samples are redrawn (up to 100 times); after that, clients still short
    receive samples from the largest shards.
    """
    if concentration <= 0:
        raise ValueError("concentration must be positive")
    if B < 1:
        raise ValueError("B must be >= 1")
    if M < 1 or M * B > ds.n:
        raise ValueError(f"cannot give {M} clients {B} samples each from n={ds.n}")
    rng = np.random.default_rng(seed)
    by_class = [rng.permutation(np.flatnonzero(ds.labels == c)) for c in range(ds.num_classes)]
    assignment: list[list[int]] = []
    for _ in range(100):
        assignment = [[] for _ in range(M)]
        for members in by_class:
            props = rng.dirichlet(np.full(M, concentration))
            counts = _largest_remainder(props, len(members))
            start = 0
            for m, cnt in enumerate(counts):
                assignment[m].extend(members[start : start + cnt].tolist())
                start += cnt
        if min(len(a) for a in assignment) >= B:
            break
    else:
        if ds.n < M * B:
            raise ValueError(f"cannot give {M} clients {B} samples each from {ds.n} samples")
        log.info("dirichlet_partition: falling back to round-robin top-up for short clients")
        for m in range(M):
            while len(assignment[m]) < B:
                donor = max(range(M), key=lambda j: len(assignment[j]))
                assignment[m].append(assignment[donor].pop())
    return [_split_components(rng, np.array(sorted(a), dtype=int), B) for a in assignment]


def label_distribution(ds: LabeledDataset, shard: ClientShard) -> np.ndarray:
    counts = np.bincount(ds.labels[shard.indices], minlength=ds.num_classes)
    return counts / counts.sum()


def group_by_label_affinity(ds: LabeledDataset, shards: Sequence[ClientShard], K_bar: int, mode: str = "label-sorted", seed: int = 0) -> list[list[int]]:
    """Assign clients to ``K_bar`` equal groups.

    ``label-sorted`` orders clients by dominant label (ties broken by the share
    of that label, descending) and chunks consecutively, which puts clients with
    similar data in one group. ``random`` permutes clients before chunking.
    """
    M = len(shards)
    if K_bar < 1 or M % K_bar:
        raise ValueError(f"K_bar={K_bar} must divide M={M}")
    if mode == "label-sorted":
        dists = [label_distribution(ds, s) for s in shards]
        order = sorted(range(M), key=lambda m: (int(np.argmax(dists[m])), -float(dists[m].max()), m))
    elif mode == "random":
        order = [int(m) for m in np.random.default_rng(seed).permutation(M)]
    else:
        raise ValueError(f"unknown grouping mode {mode!r}")
    size = M // K_bar
    return [sorted(order[i * size : (i + 1) * size]) for i in range(K_bar)]


def shards_to_csv(shards: Sequence[ClientShard]) -> str:
    """Rows of ``client,component,sample`` for inspection."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["client", "component", "sample"])
    for m, s in enumerate(shards):
        for l in range(s.B):
            for idx in s.component(l):
                writer.writerow([m, l, int(idx)])
    return buf.getvalue()


class LogisticPopulation:
    """Clients with L2-regularized multinomial logistic losses on their shards.

    Parameters are a flattened ``(C, d)`` weight matrix. The client loss is the
    mean cross-entropy over the shard plus ``(l2 / 2) ||W||^2``; a component
    loss is the same expression restricted to the component's samples, so the
    regularizer appears once per component and averages back to the client
    loss. The global objective averages the clients with equal weight.
    """

    def __init__(self, ds: LabeledDataset, shards: Sequence[ClientShard], groups: Sequence[Sequence[int]], l2: float = 0.1):
        if l2 <= 0:
            raise ValueError("l2 strength must be positive")
        self.ds = ds
        self.shards = tuple(shards)
        self.groups = tuple(tuple(g) for g in groups)
        self.l2 = float(l2)
        self.C = ds.num_classes
        self._f_star: float | None = None
        self._w_star: np.ndarray | None = None

    @property
    def dim(self) -> int:
        return self.C * self.ds.d

    @property
    def num_clients(self) -> int:
        return len(self.shards)

    @property
    def mu(self) -> float:
        return self.l2

    @property
    def f_star(self) -> float | None:
        return self._f_star

    def num_components(self, m: int) -> int:
        return self.shards[m].B

    def num_samples(self, m: int) -> int:
        return len(self.shards[m].indices)

    def _loss_grad(self, idx: np.ndarray, w: np.ndarray) -> tuple[float, np.ndarray]:
        W = w.reshape(self.C, self.ds.d)
        x = self.ds.features[idx]
        y = self.ds.labels[idx]
        logits = x @ W.T
        logp = log_softmax(logits, axis=1)
        p = np.exp(logp)
        p[np.arange(len(y)), y] -= 1.0
        grad = (p.T @ x) / len(y) + self.l2 * W
        loss = -float(logp[np.arange(len(y)), y].mean()) + 0.5 * self.l2 * float(np.sum(W * W))
        return loss, grad.ravel()

    def client_loss(self, m: int, w: np.ndarray) -> float:
        return self._loss_grad(self.shards[m].indices, np.asarray(w, dtype=float))[0]

    def client_gradient(self, m: int, w: np.ndarray) -> np.ndarray:
        return self._loss_grad(self.shards[m].indices, np.asarray(w, dtype=float))[1]

    def component_gradient(self, m: int, l: int, w: np.ndarray) -> np.ndarray:
        shard = self.shards[m]
        if not 0 <= l < shard.B:
            raise IndexError(f"component {l} out of range 0..{shard.B - 1}")
        if shard.B == 1:
            return self.client_gradient(m, w)
        return self._loss_grad(shard.component(l), np.asarray(w, dtype=float))[1]

    def sample_gradient(self, m: int, idx: np.ndarray, w: np.ndarray) -> np.ndarray:
        return self._loss_grad(self.shards[m].indices[np.asarray(idx, dtype=int)], np.asarray(w, dtype=float))[1]

    def loss(self, w: np.ndarray) -> float:
        return float(np.mean([self.client_loss(m, w) for m in range(self.num_clients)]))

    def gradient(self, w: np.ndarray) -> np.ndarray:
        return np.mean([self.client_gradient(m, w) for m in range(self.num_clients)], axis=0)

    def loss_and_gradient(self, w: np.ndarray) -> tuple[float, np.ndarray]:
        parts = [self._loss_grad(s.indices, np.asarray(w, dtype=float)) for s in self.shards]
        return float(np.mean([p[0] for p in parts])), np.mean([p[1] for p in parts], axis=0)

    def accuracy(self, w: np.ndarray) -> float:
        W = np.asarray(w, dtype=float).reshape(self.C, self.ds.d)
        pred = np.argmax(self.ds.features @ W.T, axis=1)
        return float(np.mean(pred == self.ds.labels))

    def solve_optimum(self, tol: float = 1e-12) -> float:
        """Minimize the global objective with L-BFGS and cache ``f_star``."""
        res = minimize(self.loss_and_gradient, np.zeros(self.dim), jac=True, method="L-BFGS-B", options={"gtol": tol, "ftol": 1e-15, "maxiter": 10_000})
        self._w_star = res.x
        self._f_star = float(res.fun)
        return self._f_star

    def predict_proba(self, w: np.ndarray) -> np.ndarray:
        W = np.asarray(w, dtype=float).reshape(self.C, self.ds.d)
        return softmax(self.ds.features @ W.T, axis=1)


def make_classification_population(
    C: int = 4,
    d: int = 5,
    n: int = 2000,
    separation: float = 3.0,
    M: int = 20,
    concentration: float = 0.5,
    B: int = 1,
    K_bar: int = 1,
    grouping: str = "label-sorted",
    l2: float = 0.1,
    seed: int = 0,
) -> LogisticPopulation:
    """Dataset, partition and grouping in one call, all derived from ``seed``."""
    ds = make_gaussian_mixture(C, d, n, separation, seed)
    shards = dirichlet_partition(ds, M, concentration, B, seed + 1)
    groups = group_by_label_affinity(ds, shards, K_bar, grouping, seed + 2)
    return LogisticPopulation(ds, shards, groups, l2)

"""Federated averaging under cyclic client participation.

Each round the server broadcasts the global model to N clients drawn from the
currently available group, every selected client runs a local update, and the
server averages the returned models.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .scheduling import MINIBATCH, PERMUTE, CycleSchedule, RngStream, draw_permutation, round_to_indices, select_round_clients

log = logging.getLogger(__name__)

MODES = ("GD", "SGD", "SSGD")
DIVERGENCE_LIMIT = 1e12
AGGREGATION_TOL = 1e-12


class DivergenceError(RuntimeError):
    """Raised when an iterate becomes non-finite or exceeds the norm guard."""

    def __init__(self, message: str, round_index: int | None = None):
        super().__init__(message)
        self.round_index = round_index


class ClientView:
    """Client ``m`` of a population, exposing only that client's objective."""

    def __init__(self, population: Any, m: int):
        self.population = population
        self.m = m

    def gradient(self, w: np.ndarray) -> np.ndarray:
        return self.population.client_gradient(self.m, w)

    def component_gradient(self, l: int, w: np.ndarray) -> np.ndarray:
        return self.population.component_gradient(self.m, l, w)

    def sample_gradient(self, idx: np.ndarray, w: np.ndarray) -> np.ndarray:
        return self.population.sample_gradient(self.m, idx, w)

    @property
    def num_components(self) -> int:
        return self.population.num_components(self.m)

    @property
    def num_samples(self) -> int:
        return self.population.num_samples(self.m)


def _guard(w: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(w)):
        raise DivergenceError("non-finite iterate")
    norm = float(np.linalg.norm(w))
    if norm > DIVERGENCE_LIMIT:
        raise DivergenceError(f"iterate norm {norm:.3e} exceeds {DIVERGENCE_LIMIT:.0e}")
    return w


def _gd(obj: ClientView, w: np.ndarray, eta: float) -> tuple[np.ndarray, np.ndarray]:
    g = obj.gradient(w)
    if not np.all(np.isfinite(g)):
        raise DivergenceError("non-finite gradient")
    return _guard(w - eta * g), g


def _sgd(obj: ClientView, w: np.ndarray, eta: float, tau: int, b: int, gen: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    n = obj.num_samples
    if tau < 1:
        raise ValueError("tau must be >= 1")
    if not 1 <= b <= n:
        raise ValueError(f"minibatch size {b} outside 1..{n}")
    gsum = np.zeros_like(w)
    for _ in range(tau):
        if b == n:
            g = obj.gradient(w)
        else:
            g = obj.sample_gradient(gen.choice(n, size=b, replace=False), w)
        w = _guard(w - eta * g)
        gsum = gsum + g
    return w, gsum


def _ssgd(obj: ClientView, w: np.ndarray, eta: float, pi: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
    pi = np.asarray(pi, dtype=int)
    if sorted(pi.tolist()) != list(range(obj.num_components)):
        raise ValueError("pi must be a permutation of the client's components")
    if len(pi) == 1:
        # single component: the component loss is the client loss
        return _gd(obj, w, eta)
    gsum = np.zeros_like(w)
    for l in pi:
        g = obj.component_gradient(int(l), w)
        w = _guard(w - eta * g)
        gsum = gsum + g
    return w, gsum


def local_update_gd(obj: ClientView, w: np.ndarray, eta: float) -> np.ndarray:
    """One full-gradient step: ``w - eta * grad F_m(w)``."""
    return _gd(obj, np.asarray(w, dtype=float), eta)[0]


def local_update_sgd(obj: ClientView, w: np.ndarray, eta: float, tau: int, minibatch: int, rng: RngStream | np.random.Generator) -> np.ndarray:
    """``tau`` minibatch SGD steps; each minibatch is drawn without replacement.

    A minibatch covering all local samples uses the exact client gradient.
    """
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    return _sgd(obj, np.asarray(w, dtype=float), eta, tau, minibatch, gen)[0]


def local_update_ssgd(obj: ClientView, w: np.ndarray, eta: float, pi: Sequence[int]) -> np.ndarray:
    """One pass over the client's components in the order ``pi``."""
    return _ssgd(obj, np.asarray(w, dtype=float), eta, pi)[0]


@dataclass
class RunConfig:
    """Hyperparameters of one run. ``eta`` is the local step size."""

    population: Any
    mode: str = "GD"
    eta: float = 0.1
    K: int = 1
    N: int = 1
    tau: int = 1
    minibatch: int = 1
    seed: int = 0
    record_iterates: bool = False
    w0: np.ndarray | None = None
    groups: Sequence[Sequence[int]] | None = None
    order: str = "identity"
    eta_theorem: float | None = None
    warnings: list[str] = field(default_factory=list)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if self.K < 0:
            raise ValueError("K must be non-negative")

    @property
    def schedule(self) -> CycleSchedule:
        groups = self.groups if self.groups is not None else self.population.groups
        return CycleSchedule.build(groups, self.order, self.seed)

    @property
    def K_bar(self) -> int:
        groups = self.groups if self.groups is not None else self.population.groups
        return len(groups)

    @property
    def T(self) -> int:
        return self.K * self.K_bar

    @property
    def B(self) -> int:
        return self.population.num_components(0)

    def evals_per_round(self) -> int:
        if self.mode == "GD":
            return self.N
        if self.mode == "SGD":
            return self.N * self.tau
        return self.N * self.B


@dataclass(frozen=True)
class RoundRecord:
    t: int
    k: int
    i: int
    clients: tuple[int, ...]
    loss_gap: float
    grad_norm: float
    evals: int


@dataclass
class RunLog:
    records: list[RoundRecord]
    final_model: np.ndarray
    iterates: list[np.ndarray] | None
    meta: dict[str, Any]

    CSV_HEADER = ("t", "k", "i", "clients", "loss_gap", "grad_norm", "evals")

    def __len__(self) -> int:
        return len(self.records)

    @property
    def loss_gaps(self) -> np.ndarray:
        return np.array([r.loss_gap for r in self.records])

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.CSV_HEADER)
        for r in self.records:
            writer.writerow([r.t, r.k, r.i, ";".join(str(m) for m in r.clients), repr(r.loss_gap), repr(r.grad_norm), r.evals])
        return buf.getvalue()

    @staticmethod
    def read_csv(text: str) -> list[RoundRecord]:
        rows = list(csv.DictReader(io.StringIO(text)))
        return [
            RoundRecord(
                int(r["t"]),
                int(r["k"]),
                int(r["i"]),
                tuple(int(x) for x in r["clients"].split(";") if x),
                float(r["loss_gap"]),
                float(r["grad_norm"]),
                int(r["evals"]),
            )
            for r in rows
        ]


def _loss_gap(pop: Any, w: np.ndarray) -> float:
    if hasattr(pop, "loss_gap"):
        return pop.loss_gap(w)
    f_star = getattr(pop, "f_star", None)
    return pop.loss(w) - f_star if f_star is not None else pop.loss(w)


def server_round(
    pop: Any,
    w: np.ndarray,
    clients: Sequence[int],
    mode: str,
    eta: float,
    k: int = 1,
    i: int = 1,
    tau: int = 1,
    minibatch: int = 1,
    rng: RngStream | None = None,
) -> tuple[np.ndarray, float]:
    """Run one communication round from global model ``w``.

    Returns the averaged model and the discrepancy between model averaging and
    the aggregated-update form ``w - (eta / N) * sum of local gradient sums``.
    """
    rng = rng if rng is not None else RngStream(0)
    models, gsums = [], []
    for m in sorted(clients):
        obj = ClientView(pop, m)
        if mode == "GD":
            wm, gs = _gd(obj, w, eta)
        elif mode == "SGD":
            wm, gs = _sgd(obj, w, eta, tau, minibatch, rng.child(MINIBATCH, k, i, m).generator())
        elif mode == "SSGD":
            pi = draw_permutation(obj.num_components, rng.child(PERMUTE, k, m))
            wm, gs = _ssgd(obj, w, eta, pi)
        else:
            raise ValueError(f"unknown mode {mode!r}")
        models.append(wm)
        gsums.append(gs)
    n = len(models)
    w_avg = np.mean(models, axis=0)
    delta = -(eta / n) * np.sum(gsums, axis=0)
    err = float(np.linalg.norm(w_avg - (w + delta)))
    return w_avg, err


def run(config: RunConfig) -> RunLog:
    """Execute ``K`` cycle-epochs of ``K_bar`` rounds each."""
    pop = config.population
    sched = config.schedule
    rng = RngStream(config.seed)
    w = np.zeros(pop.dim) if config.w0 is None else np.array(config.w0, dtype=float)
    if w.shape != (pop.dim,):
        raise ValueError(f"initial model has shape {w.shape}, population dimension is {pop.dim}")
    if not 1 <= config.N <= sched.group_size:
        raise ValueError(f"N={config.N} must lie in 1..{sched.group_size}")
    per_round = config.evals_per_round()
    records: list[RoundRecord] = []
    iterates = [w.copy()] if config.record_iterates else None
    max_agg = 0.0
    for t in range(config.T):
        k, i = round_to_indices(t, sched.k_bar)
        clients = select_round_clients(sched, k, i, config.N, rng)
        try:
            w_new, agg = server_round(pop, w, clients, config.mode, config.eta, k, i, config.tau, config.minibatch, rng)
        except DivergenceError as exc:
            raise DivergenceError(f"round {t} (k={k}, i={i}): {exc}", t) from None
        tol = AGGREGATION_TOL * max(1.0, float(np.linalg.norm(w)), float(np.linalg.norm(w_new)))
        if agg > tol:
            raise AssertionError(f"round {t}: model averaging deviates from the update form by {agg:.3e}")
        max_agg = max(max_agg, agg)
        w = w_new
        records.append(RoundRecord(t, k, i, clients, _loss_gap(pop, w), float(np.linalg.norm(pop.gradient(w))), per_round * (t + 1)))
        if iterates is not None:
            iterates.append(w.copy())
    meta = {
        "mode": config.mode,
        "eta_local": config.eta,
        "eta_theorem": config.eta_theorem,
        "K": config.K,
        "K_bar": sched.k_bar,
        "T": config.T,
        "N": config.N,
        "tau": config.tau,
        "minibatch": config.minibatch,
        "B": config.B,
        "seed": config.seed,
        "order": list(sched.order),
        "order_mode": config.order,
        "max_aggregation_error": max_agg,
        "warnings": list(config.warnings),
    }
    return RunLog(records, w, iterates, meta)


@dataclass(frozen=True)
class StepSize:
    """A prescribed step size and its conversion to the engine's local step.

    ``eta`` is the value from the rate theorem for the mode; ``eta_local`` is the
    per-step client learning rate the engine uses with mean aggregation.
    """

    eta: float
    eta_local: float
    below_bound: bool
    required_T: float


def theoretical_step_size(mode: str, constants: Any, M: int, K_bar: int, N: int, tau: int = 1, B: int = 1, T: int = 1) -> StepSize:
    """Step size prescribed by the convergence theorem for ``mode``.

    GD: ``log(M T^2 / K_bar^2) / (mu N T)``, requires ``T >= 7 kappa K_bar log(.)``.
    SGD: the GD value divided by ``tau``; requires ``T >= 10 kappa K_bar log(.)``.
    SSGD: ``log(M B T^2 / K_bar^2) / (mu B T)``; requires ``T >= 10 kappa K_bar log(.)``.

    The GD and SGD prescriptions are stated for sum aggregation, so the local
    step with mean aggregation is ``N * eta``. The SSGD value is used as is.
    """
    L, mu = float(constants.L), float(constants.mu)
    if L <= 0 or mu <= 0:
        raise ValueError("L and mu must be positive")
    if min(M, K_bar, N, tau, B, T) < 1:
        raise ValueError("M, K_bar, N, tau, B and T must be positive")
    kappa = L / mu
    if mode == "GD":
        lg = math.log(M * T**2 / K_bar**2)
        eta = lg / (mu * N * T)
        local = N * eta
        factor = 7
    elif mode == "SGD":
        lg = math.log(M * T**2 / K_bar**2)
        eta = lg / (tau * mu * N * T)
        local = N * eta
        factor = 10
    elif mode == "SSGD":
        lg = math.log(M * B * T**2 / K_bar**2)
        eta = lg / (mu * B * T)
        local = eta
        factor = 10
    else:
        raise ValueError(f"mode must be one of {MODES}")
    if lg <= 0:
        raise ValueError("T too small: the log factor must be positive")
    required = factor * kappa * K_bar * lg
    return StepSize(eta=eta, eta_local=local, below_bound=T < required, required_T=required)

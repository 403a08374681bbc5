"""Quadratic client populations with heterogeneity constants known by construction.

Every component is ``F_{m,l}(w) = 0.5 w^T H w - b_{m,l}^T w + c``. With a shared
Hessian the gradient differences between clients, groups and components are
constant in ``w``, so the suprema in the heterogeneity bounds are attained
everywhere and can be read off the linear terms.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class QuadraticComponent:
    hessian: np.ndarray
    linear: np.ndarray
    offset: float = 0.0

    def __post_init__(self):
        h = np.asarray(self.hessian, dtype=float)
        scale = max(np.abs(h).max(), 1.0)
        if h.ndim != 2 or h.shape[0] != h.shape[1]:
            raise ValueError("hessian must be square")
        if np.abs(h - h.T).max() > 1e-12 * scale:
            raise ValueError("hessian must be symmetric")
        if np.linalg.eigvalsh(h).min() <= 0:
            raise ValueError("hessian must be positive definite")

    def value(self, w: np.ndarray) -> float:
        return float(0.5 * w @ self.hessian @ w - self.linear @ w + self.offset)

    def gradient(self, w: np.ndarray) -> np.ndarray:
        return self.hessian @ w - self.linear


@dataclass(frozen=True)
class ClientQuadratic:
    components: tuple[QuadraticComponent, ...]
    client_index: int

    @property
    def hessian(self) -> np.ndarray:
        return np.mean([c.hessian for c in self.components], axis=0)

    @property
    def linear(self) -> np.ndarray:
        return np.mean([c.linear for c in self.components], axis=0)

    def value(self, w: np.ndarray) -> float:
        return float(np.mean([c.value(w) for c in self.components]))


@dataclass(frozen=True)
class PopulationConstants:
    L: float
    mu: float
    gamma: float
    alpha: float
    nu: float
    nu_bar: float
    sigma2: float
    f_star: float
    w_star: np.ndarray
    estimated: bool = False

    @property
    def kappa(self) -> float:
        return self.L / self.mu


class QuadraticPopulation:
    """M quadratic clients split into K_bar groups.

    Component data is held as dense arrays: ``hessians`` has shape (M, B, d, d)
    and ``linears`` (M, B, d). The object is treated as immutable.
    """

    def __init__(
        self,
        clients: Sequence[ClientQuadratic],
        groups: Sequence[Sequence[int]],
        shared_hessian_flag: bool | None = None,
    ):
        self.clients = tuple(clients)
        self.groups = tuple(tuple(int(m) for m in g) for g in groups)
        m_count = len(self.clients)
        flat = sorted(m for g in self.groups for m in g)
        if flat != list(range(m_count)):
            raise ValueError("groups must be disjoint and cover every client")
        if len({len(g) for g in self.groups}) != 1:
            raise ValueError("groups must have equal size")
        b_counts = {len(c.components) for c in self.clients}
        if len(b_counts) != 1:
            raise ValueError("every client must have the same number of components")
        self.B = b_counts.pop()
        self.hessians = np.array([[c.hessian for c in cl.components] for cl in self.clients], dtype=float)
        self.linears = np.array([[c.linear for c in cl.components] for cl in self.clients], dtype=float)
        self.offsets = np.array([[c.offset for c in cl.components] for cl in self.clients], dtype=float)
        for arr in (self.hessians, self.linears, self.offsets):
            arr.setflags(write=False)
        self.d = self.linears.shape[-1]
        first = self.hessians[0, 0]
        actually_shared = bool(np.all(self.hessians == first))
        if shared_hessian_flag and not actually_shared:
            raise ValueError("shared_hessian_flag set but component Hessians differ")
        self.shared_hessian_flag = actually_shared if shared_hessian_flag is None else bool(shared_hessian_flag)
        self.client_hessians = self.hessians.mean(axis=1)
        self.client_linears = self.linears.mean(axis=1)
        self.mean_hessian = self.client_hessians.mean(axis=0)
        self.mean_linear = self.client_linears.mean(axis=0)
        self.mean_offset = float(self.offsets.mean())
        self._shared = first if self.shared_hessian_flag else None

    @cached_property
    def constants(self) -> "PopulationConstants":
        return constants(self)

    # objective interface used by the engine and the analysis oracles

    @property
    def dim(self) -> int:
        return self.d

    @property
    def num_clients(self) -> int:
        return len(self.clients)

    @property
    def k_bar(self) -> int:
        return len(self.groups)

    @property
    def f_star(self) -> float:
        return self.constants.f_star

    def num_components(self, m: int) -> int:
        return self.B

    def num_samples(self, m: int) -> int:
        return self.B

    def client_hessian(self, m: int) -> np.ndarray:
        return self._shared if self._shared is not None else self.client_hessians[m]

    def _check(self, m: int, w: np.ndarray) -> np.ndarray:
        if not 0 <= m < self.num_clients:
            raise IndexError(f"client {m} out of range 0..{self.num_clients - 1}")
        w = np.asarray(w, dtype=float)
        if w.shape != (self.d,):
            raise ValueError(f"expected a vector of dimension {self.d}, got shape {w.shape}")
        return w

    def client_gradient(self, m: int, w: np.ndarray) -> np.ndarray:
        w = self._check(m, w)
        return self.client_hessian(m) @ w - self.client_linears[m]

    def component_gradient(self, m: int, l: int, w: np.ndarray) -> np.ndarray:
        w = self._check(m, w)
        if not 0 <= l < self.B:
            raise IndexError(f"component {l} out of range 0..{self.B - 1}")
        h = self._shared if self._shared is not None else self.hessians[m, l]
        return h @ w - self.linears[m, l]

    def sample_gradient(self, m: int, idx: np.ndarray, w: np.ndarray) -> np.ndarray:
        """Mean gradient over the components listed in ``idx`` (a minibatch)."""
        w = self._check(m, w)
        idx = np.asarray(idx, dtype=int)
        if self._shared is not None:
            return self._shared @ w - self.linears[m, idx].mean(axis=0)
        return (self.hessians[m, idx] @ w).mean(axis=0) - self.linears[m, idx].mean(axis=0)

    def stochastic_gradient(self, m: int, w: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """Gradient of one uniformly drawn component."""
        return self.component_gradient(m, int(rng.integers(self.B)), w)

    def client_loss(self, m: int, w: np.ndarray) -> float:
        w = self._check(m, w)
        h = self.client_hessian(m)
        return float(0.5 * w @ h @ w - self.client_linears[m] @ w + self.offsets[m].mean())

    def loss(self, w: np.ndarray) -> float:
        w = np.asarray(w, dtype=float)
        return float(0.5 * w @ self.mean_hessian @ w - self.mean_linear @ w + self.mean_offset)

    def gradient(self, w: np.ndarray) -> np.ndarray:
        return self.mean_hessian @ np.asarray(w, dtype=float) - self.mean_linear

    def loss_gap(self, w: np.ndarray) -> float:
        # 0.5 e^T H e avoids cancellation in F(w) - F* near the optimum
        e = np.asarray(w, dtype=float) - self.constants.w_star
        return float(0.5 * e @ self.mean_hessian @ e)

    def group_gradient(self, i: int, w: np.ndarray) -> np.ndarray:
        return np.mean([self.client_gradient(m, w) for m in self.groups[i]], axis=0)


def client_gradient(pop: QuadraticPopulation, m: int, w: np.ndarray) -> np.ndarray:
    return pop.client_gradient(m, w)


def component_gradient(pop: QuadraticPopulation, m: int, l: int, w: np.ndarray) -> np.ndarray:
    return pop.component_gradient(m, l, w)


def stochastic_gradient(pop: QuadraticPopulation, m: int, w: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    return pop.stochastic_gradient(m, w, rng)


def _random_orthogonal(rng: np.random.Generator, d: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    return q * np.sign(np.diag(r))


def _balanced_unit_offsets(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    """``n`` unit vectors in R^d summing to zero (all zero when n == 1).

    Pairs ``(+e, -e)`` along fresh random directions; an odd count ends with
    an equilateral triangle in a random plane.
    """
    out = np.zeros((n, d))
    if n == 1:
        return out
    pairs = n // 2 if n % 2 == 0 else (n - 3) // 2
    for j in range(pairs):
        e = rng.standard_normal(d)
        e /= np.linalg.norm(e)
        out[2 * j], out[2 * j + 1] = e, -e
    if n % 2:
        q, _ = np.linalg.qr(rng.standard_normal((d, 2)))
        angles = 2 * np.pi * np.arange(3) / 3
        tri = np.stack([np.cos(angles), np.sin(angles)], axis=1) @ q.T
        tri -= tri.mean(axis=0)
        out[-3:] = tri / np.linalg.norm(tri, axis=1, keepdims=True)
    return out


def make_population(
    d: int,
    M: int,
    K_bar: int,
    B: int = 1,
    target_gamma: float = 0.0,
    target_alpha: float = 0.0,
    target_nu_bar: float = 0.0,
    hessian_spectrum: Sequence[float] | None = None,
    seed: int = 0,
    hessian_perturbation: float = 0.0,
) -> QuadraticPopulation:
    """Construct a population realizing the requested heterogeneity exactly.

    Linear terms are ``b_{m,l} = b_bar + alpha*u_i + gamma*v_m + nu_bar*z_{m,l}``
    where the ``u_i`` are the vertices of a centred regular simplex (unit norm,
    summing to zero), and the ``v_m`` (within a group) and ``z_{m,l}`` (within
    a client) are unit vectors summing to zero. Clients ``i*M/K_bar`` through
    ``(i+1)*M/K_bar - 1`` form group ``i``.

    ``hessian_perturbation > 0`` scales each client's spectrum by an independent
    factor in ``[1 - p, 1 + p]``; the heterogeneity constants are then only
    estimated (see :func:`constants`).
    """
    if K_bar < 1 or M % K_bar:
        raise ValueError(f"K_bar={K_bar} must divide M={M}")
    if B < 1:
        raise ValueError("B must be >= 1")
    if min(target_gamma, target_alpha, target_nu_bar) < 0:
        raise ValueError("heterogeneity targets must be non-negative")
    if target_alpha > 0 and d < K_bar:
        raise ValueError(f"d={d} must be at least K_bar={K_bar} for an exact alpha")
    if max(target_gamma, target_nu_bar) > 0 and d < 2:
        raise ValueError("d must be at least 2 for positive gamma or nu_bar")
    spectrum = np.ones(d) if hessian_spectrum is None else np.asarray(hessian_spectrum, dtype=float)
    if spectrum.shape != (d,):
        raise ValueError(f"hessian_spectrum must have {d} entries")
    if np.any(spectrum <= 0):
        raise ValueError("hessian_spectrum entries must be positive")
    if not 0 <= hessian_perturbation < 1:
        raise ValueError("hessian_perturbation must lie in [0, 1)")
    group_size = M // K_bar
    for name, target, count in (("alpha", target_alpha, K_bar), ("gamma", target_gamma, group_size), ("nu_bar", target_nu_bar, B)):
        if target > 0 and count == 1:
            raise ValueError(f"target {name} > 0 is unrealizable with a single member at that level")

    rng = np.random.default_rng(seed)
    rot = _random_orthogonal(rng, d)
    dirs = _random_orthogonal(rng, d)
    b_bar = rng.standard_normal(d)

    u = np.zeros((K_bar, d))
    if 1 < K_bar <= d:
        simplex = np.eye(K_bar) - 1.0 / K_bar
        simplex /= np.linalg.norm(simplex, axis=1, keepdims=True)
        u = simplex @ dirs[:, :K_bar].T

    groups = [list(range(i * group_size, (i + 1) * group_size)) for i in range(K_bar)]
    v = np.zeros((M, d))
    for g in groups:
        v[g] = _balanced_unit_offsets(rng, group_size, d)

    base_h = (rot * spectrum) @ rot.T
    base_h = 0.5 * (base_h + base_h.T)
    clients = []
    for i, g in enumerate(groups):
        for m in g:
            if hessian_perturbation > 0:
                scale = 1 + hessian_perturbation * rng.uniform(-1, 1)
                h = (rot * (spectrum * scale)) @ rot.T
                h = 0.5 * (h + h.T)
            else:
                h = base_h
            z = _balanced_unit_offsets(rng, B, d)
            comps = tuple(
                QuadraticComponent(h, b_bar + target_alpha * u[i] + target_gamma * v[m] + target_nu_bar * z[l], 0.0)
                for l in range(B)
            )
            clients.append(ClientQuadratic(comps, m))
    return QuadraticPopulation(clients, groups, shared_hessian_flag=hessian_perturbation == 0)


def random_population(d: int, M: int, K_bar: int, B: int = 1, seed: int = 0, eig_range: tuple[float, float] = (0.5, 2.0)) -> QuadraticPopulation:
    """Generic quadratics: every component has its own random SPD Hessian and linear term.

    Used where an identity must hold for arbitrary quadratics rather than the
    structured populations of :func:`make_population`. Constants are estimated.
    """
    if K_bar < 1 or M % K_bar:
        raise ValueError(f"K_bar={K_bar} must divide M={M}")
    lo, hi = eig_range
    if not 0 < lo <= hi:
        raise ValueError("eig_range must satisfy 0 < lo <= hi")
    rng = np.random.default_rng(seed)
    size = M // K_bar
    groups = [list(range(i * size, (i + 1) * size)) for i in range(K_bar)]
    clients = []
    for m in range(M):
        comps = []
        for _ in range(B):
            rot = _random_orthogonal(rng, d)
            h = (rot * rng.uniform(lo, hi, d)) @ rot.T
            comps.append(QuadraticComponent(0.5 * (h + h.T), rng.standard_normal(d), float(rng.standard_normal())))
        clients.append(ClientQuadratic(tuple(comps), m))
    return QuadraticPopulation(clients, groups)


def _probe_set(pop: QuadraticPopulation, w_star: np.ndarray, count: int = 32) -> list[np.ndarray]:
    # Seeded probes around the optimum; radius scales with the optimum norm.
    rng = np.random.default_rng(0x51AB)
    radius = 1.0 + np.linalg.norm(w_star)
    return [w_star + radius * rng.standard_normal(pop.d) for _ in range(count)]


def constants(pop: QuadraticPopulation) -> PopulationConstants:
    """Smoothness, PL and heterogeneity constants of ``pop``.

    Exact under a shared Hessian. Otherwise gamma, alpha, nu_bar and sigma2 are
    maxima over a fixed seeded probe set of 32 points around ``w_star`` and the
    result is flagged ``estimated``.
    """
    comp_eigs = np.linalg.eigvalsh(pop.hessians.reshape(-1, pop.d, pop.d))
    L = float(comp_eigs.max())
    mean_eigs = np.linalg.eigvalsh(pop.mean_hessian)
    if mean_eigs.min() <= 1e-10 * max(mean_eigs.max(), 1e-300):
        raise np.linalg.LinAlgError("average Hessian is singular")
    mu = float(mean_eigs.min())
    w_star = np.linalg.solve(pop.mean_hessian, pop.mean_linear)
    f_star = pop.loss(w_star)

    if pop.shared_hessian_flag:
        b_m = pop.client_linears
        b_groups = np.array([b_m[list(g)].mean(axis=0) for g in pop.groups])
        group_of = np.empty(pop.num_clients, dtype=int)
        for i, g in enumerate(pop.groups):
            group_of[list(g)] = i
        gamma = float(np.linalg.norm(b_m - b_groups[group_of], axis=1).max())
        alpha = float(np.linalg.norm(b_groups - pop.mean_linear, axis=1).max())
        dev = pop.linears - b_m[:, None, :]
        sq = np.einsum("mld,mld->ml", dev, dev)
        nu_bar = float(np.sqrt(sq.max()))
        sigma2 = float(sq.mean(axis=1).max())
        estimated = False
    else:
        gamma = alpha = nu_bar = sigma2 = 0.0
        for w in _probe_set(pop, w_star):
            grads = np.array([pop.client_gradient(m, w) for m in range(pop.num_clients)])
            glob = grads.mean(axis=0)
            for g in pop.groups:
                gm = grads[list(g)].mean(axis=0)
                gamma = max(gamma, float(np.linalg.norm(grads[list(g)] - gm, axis=1).max()))
                alpha = max(alpha, float(np.linalg.norm(gm - glob)))
            for m in range(pop.num_clients):
                comp = np.array([pop.component_gradient(m, l, w) for l in range(pop.B)])
                sq = np.sum((comp - grads[m]) ** 2, axis=1)
                nu_bar = max(nu_bar, float(np.sqrt(sq.max())))
                sigma2 = max(sigma2, float(sq.mean()))
        estimated = True
    return PopulationConstants(
        L=L,
        mu=mu,
        gamma=gamma,
        alpha=alpha,
        nu=gamma + alpha,
        nu_bar=nu_bar,
        sigma2=sigma2,
        f_star=f_star,
        w_star=w_star,
        estimated=estimated,
    )


def minibatch_variance(sigma2: float, B: int, b: int) -> float:
    """Variance of a without-replacement minibatch mean of size ``b`` out of ``B``."""
    if not 1 <= b <= B:
        raise ValueError(f"minibatch size {b} outside 1..{B}")
    if B == 1:
        return 0.0
    return sigma2 * (B - b) / (b * (B - 1))

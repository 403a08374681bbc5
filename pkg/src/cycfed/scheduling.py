"""Cyclic participation structure: groups, traversal order, and seeded streams."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class RngStream:
    """Counter-based random stream addressed by ``(root_seed, path)``.

    Streams at distinct paths are independent; the same path always yields the
    same sequence, regardless of which other streams were consumed before.
    """

    root_seed: int
    path: tuple[int, ...] = ()

    def child(self, *keys: int) -> "RngStream":
        return RngStream(self.root_seed, self.path + tuple(int(k) for k in keys))

    def generator(self) -> np.random.Generator:
        seq = np.random.SeedSequence(entropy=int(self.root_seed) & (2**64 - 1), spawn_key=self.path)
        return np.random.Generator(np.random.PCG64(seq))


# Stream purposes; the first path entry after the run tag.
SELECT = 1
PERMUTE = 2
MINIBATCH = 3


@dataclass(frozen=True)
class CycleSchedule:
    groups: tuple[tuple[int, ...], ...]
    order: tuple[int, ...] = field(default=())

    def __post_init__(self):
        groups = tuple(tuple(sorted(int(m) for m in g)) for g in self.groups)
        if not groups:
            raise ValueError("at least one group is required")
        sizes = {len(g) for g in groups}
        if len(sizes) != 1 or 0 in sizes:
            raise ValueError(f"groups must be non-empty and equally sized, got sizes {sorted(len(g) for g in groups)}")
        flat = [m for g in groups for m in g]
        if sorted(flat) != list(range(len(flat))):
            raise ValueError("groups must be disjoint and cover 0..M-1")
        order = tuple(self.order) if self.order else tuple(range(len(groups)))
        if sorted(order) != list(range(len(groups))):
            raise ValueError(f"order must be a permutation of 0..{len(groups) - 1}")
        object.__setattr__(self, "groups", groups)
        object.__setattr__(self, "order", order)

    @classmethod
    def build(cls, groups: Sequence[Sequence[int]], order: str = "identity", seed: int = 0) -> "CycleSchedule":
        """Build a schedule with identity order or a seeded fixed shuffle."""
        k_bar = len(groups)
        if order == "identity":
            perm = tuple(range(k_bar))
        elif order == "shuffled":
            rng = RngStream(seed, (0xC7C1E,)).generator()
            perm = tuple(int(x) for x in rng.permutation(k_bar))
        else:
            raise ValueError(f"unknown order mode {order!r}")
        return cls(tuple(tuple(g) for g in groups), perm)

    @property
    def k_bar(self) -> int:
        return len(self.groups)

    @property
    def num_clients(self) -> int:
        return sum(len(g) for g in self.groups)

    @property
    def group_size(self) -> int:
        return len(self.groups[0])

    def group_at(self, i: int) -> tuple[int, ...]:
        """Group visited at round ``i`` (1-based) of every cycle-epoch."""
        if not 1 <= i <= self.k_bar:
            raise ValueError(f"round-in-cycle {i} outside 1..{self.k_bar}")
        return self.groups[self.order[i - 1]]


def round_to_indices(t: int, k_bar: int) -> tuple[int, int]:
    """Map a 0-based global round to 1-based ``(cycle_epoch, round_in_cycle)``."""
    if t < 0:
        raise ValueError("round index must be non-negative")
    return t // k_bar + 1, t % k_bar + 1


def select_round_clients(sched: CycleSchedule, k: int, i: int, n: int, rng: RngStream) -> tuple[int, ...]:
    """Draw ``n`` distinct clients from the group available at ``(k, i)``.

    The draw uses the stream ``rng.child(SELECT, k, i)``, so it is independent
    across rounds and cycle-epochs. Returned indices are sorted.
    """
    group = sched.group_at(i)
    if not 1 <= n <= len(group):
        raise ValueError(f"N={n} must lie in 1..{len(group)} (group size)")
    if n == len(group):
        return group
    gen = rng.child(SELECT, k, i).generator()
    picked = gen.choice(len(group), size=n, replace=False)
    return tuple(sorted(group[j] for j in picked))


def draw_permutation(b: int, rng: RngStream) -> np.ndarray:
    """Uniform permutation of ``range(b)`` drawn from ``rng``."""
    if b < 1:
        raise ValueError("permutation size must be >= 1")
    return rng.generator().permutation(b)

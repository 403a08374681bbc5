import itertools
import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cycfed.scheduling import (
    CycleSchedule,
    RngStream,
    draw_permutation,
    round_to_indices,
    select_round_clients,
)


def consecutive_groups(M, K_bar):
    size = M // K_bar
    return [list(range(i * size, (i + 1) * size)) for i in range(K_bar)]


def test_round_to_indices_examples():
    assert round_to_indices(0, 3) == (1, 1)
    assert round_to_indices(5, 3) == (2, 3)


@given(K=st.integers(1, 12), K_bar=st.integers(1, 12))
def test_round_to_indices_is_bijective(K, K_bar):
    pairs = [round_to_indices(t, K_bar) for t in range(K * K_bar)]
    assert sorted(pairs) == list(itertools.product(range(1, K + 1), range(1, K_bar + 1)))


def test_round_to_indices_rejects_negative():
    with pytest.raises(ValueError):
        round_to_indices(-1, 3)


def test_schedule_validation():
    with pytest.raises(ValueError):
        CycleSchedule(((0, 1), (1, 2)))  # overlap
    with pytest.raises(ValueError):
        CycleSchedule(((0, 1), (2,)))  # unequal
    with pytest.raises(ValueError):
        CycleSchedule(((0, 1), (3, 4)))  # does not cover 0..M-1
    with pytest.raises(ValueError):
        CycleSchedule(((0, 1), (2, 3)), (0, 0))
    with pytest.raises(ValueError):
        CycleSchedule.build([[0], [1]], order="random")


def test_shuffled_order_is_fixed_and_seeded():
    groups = consecutive_groups(12, 6)
    a = CycleSchedule.build(groups, "shuffled", seed=5)
    b = CycleSchedule.build(groups, "shuffled", seed=5)
    assert a.order == b.order
    assert sorted(a.order) == list(range(6))
    assert CycleSchedule.build(groups).order == tuple(range(6))


def test_full_group_participation_returns_whole_group():
    sched = CycleSchedule.build(consecutive_groups(12, 3))
    for k in range(1, 4):
        for i in range(1, 4):
            assert select_round_clients(sched, k, i, 4, RngStream(0)) == sched.group_at(i)


def test_n_above_group_size_rejected():
    sched = CycleSchedule.build(consecutive_groups(12, 3))
    with pytest.raises(ValueError):
        select_round_clients(sched, 1, 1, 5, RngStream(0))


def test_marginal_and_pairwise_inclusion_frequencies():
    sched = CycleSchedule.build(consecutive_groups(12, 3))
    draws = 10_000
    root = RngStream(123)
    singles, pairs = Counter(), Counter()
    for k in range(1, draws + 1):
        sel = select_round_clients(sched, k, 2, 2, root)
        singles.update(sel)
        pairs[sel] += 1
    for m in sched.group_at(2):
        assert abs(singles[m] / draws - 0.5) <= 0.02
    # pairwise inclusion N(N-1)/(g(g-1)) = 1/6, within 3 standard errors
    p = 2 * 1 / (4 * 3)
    se = math.sqrt(p * (1 - p) / draws)
    for pair in itertools.combinations(sched.group_at(2), 2):
        assert abs(pairs[pair] / draws - p) <= 3 * se


def test_reappearance_gap_is_at_least_k_bar():
    sched = CycleSchedule.build(consecutive_groups(12, 3), "shuffled", seed=1)
    root = RngStream(9)
    last = {}
    gaps = []
    for t in range(5 * 3):
        k, i = round_to_indices(t, 3)
        for m in select_round_clients(sched, k, i, 2, root):
            if m in last:
                gaps.append(t - last[m])
            last[m] = t
    assert min(gaps) >= 3


def test_stream_consumption_order_invariance():
    sched = CycleSchedule.build(consecutive_groups(12, 3))
    root = RngStream(77)
    direct = select_round_clients(sched, 4, 2, 2, root)
    for k, i in [(1, 1), (9, 3), (4, 1)]:
        select_round_clients(sched, k, i, 2, root)
        root.child(2, k, 5).generator().random(100)
    assert select_round_clients(sched, 4, 2, 2, root) == direct


def test_distinct_paths_give_different_streams():
    a = RngStream(1, (1, 2)).generator().random(4)
    b = RngStream(1, (1, 3)).generator().random(4)
    c = RngStream(2, (1, 2)).generator().random(4)
    assert not np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert np.array_equal(a, RngStream(1).child(1, 2).generator().random(4))


def test_permutation_b1_is_identity():
    for j in range(20):
        assert draw_permutation(1, RngStream(j)).tolist() == [0]


def test_permutation_uniformity():
    draws = 60_000
    gen_root = RngStream(2024)
    counts = Counter(tuple(draw_permutation(3, gen_root.child(j)).tolist()) for j in range(draws))
    assert len(counts) == 6
    for c in counts.values():
        assert abs(c / draws - 1 / 6) <= 0.01


def test_permutation_determinism():
    assert np.array_equal(draw_permutation(9, RngStream(3, (2, 1, 4))), draw_permutation(9, RngStream(3, (2, 1, 4))))


@settings(max_examples=30)
@given(M_per=st.integers(1, 5), K_bar=st.integers(1, 5), seed=st.integers(0, 2**32))
def test_selection_stays_in_group(M_per, K_bar, seed):
    sched = CycleSchedule.build(consecutive_groups(M_per * K_bar, K_bar), "shuffled", seed)
    n = max(1, M_per // 2)
    for i in range(1, K_bar + 1):
        sel = select_round_clients(sched, 1, i, n, RngStream(seed))
        assert len(set(sel)) == n
        assert set(sel) <= set(sched.group_at(i))

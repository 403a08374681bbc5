import math
from fractions import Fraction

import numpy as np
import pytest

from cycfed.analysis import (
    cost_gd,
    cost_gd_full_group,
    cost_sgd,
    cost_ssgd_full_group,
    cost_ssgd_vs_alternatives,
    cycle_expectation_check,
    decompose_cycle,
    estimate_heterogeneity,
    expected_loss_gap,
    finite_population_factor,
    fit_rate,
    gd_cycling_sweep,
    local_rr_threshold,
    selection_outcomes,
    sgd_cycling_grid,
    sign_changes_per_cycle,
    ssgd_beats_gd_predicate,
    ssgd_vs_rr_grid,
    wor_variance_check,
)
from cycfed.engine import RunConfig, run
from cycfed.quadratic_lab import make_population, random_population


# cycle identities


def test_single_group_has_no_cross_term():
    pop = random_population(3, 4, 1, seed=0)
    dec = decompose_cycle(pop, np.ones(3), [[0, 2]], 0.1)
    np.testing.assert_array_equal(dec.noise_term, np.zeros(3))
    assert dec.residual_norm <= 1e-12


def test_decomposition_matches_engine():
    pop = random_population(5, 12, 3, seed=4)
    w0 = np.linspace(-1, 1, 5)
    dec = decompose_cycle(pop, w0, [[0, 1], [5, 7], [8, 11]], 0.05)
    assert dec.residual_norm <= 1e-12 * max(1.0, np.linalg.norm(dec.actual_delta))
    assert np.linalg.norm(dec.noise_term) > 0


def test_decomposition_rejects_non_quadratic():
    with pytest.raises(TypeError):
        decompose_cycle(object(), np.zeros(2), [[0]], 0.1)


def test_expectation_identity_by_enumeration():
    pop = random_population(3, 6, 3, seed=7)
    assert len(list(selection_outcomes(pop.groups, 1))) == 8
    chk = cycle_expectation_check(pop, np.array([0.5, -0.3, 1.0]), 1, 0.2)
    assert chk.outcomes == 8
    assert chk.residual_norm <= 1e-10


# without-replacement variance


def test_wor_full_sample_is_zero():
    lhs, rhs = wor_variance_check(np.random.default_rng(0).standard_normal((4, 3)), 4)
    assert lhs == pytest.approx(0, abs=1e-30) and rhs == 0


def test_wor_basis_vectors():
    lhs, rhs = wor_variance_check(np.eye(4), 2)
    # sum ||e_k - xbar||^2 = 4 * 3/4 = 3, times (4-2)/(2*4*3)
    assert rhs == pytest.approx(3 * 2 / 24, abs=1e-15)
    assert lhs == pytest.approx(rhs, abs=1e-12)


def test_wor_random_vectors():
    lhs, rhs = wor_variance_check(np.random.default_rng(3).standard_normal((5, 4)), 3)
    assert abs(lhs - rhs) <= 1e-12 * rhs


def test_wor_errors():
    with pytest.raises(ValueError):
        wor_variance_check(np.eye(3), 4)
    with pytest.raises(ValueError):
        wor_variance_check(np.zeros((40, 1)), 20)


# heterogeneity estimates


def test_estimates_equal_targets_on_shared_hessian():
    pop = make_population(5, 6, 3, 2, 0.5, 0.2, 0.4, seed=1)
    probes = [np.random.default_rng(j).standard_normal(5) for j in range(5)]
    gamma, alpha, nu, nu_bar = estimate_heterogeneity(pop, probes)
    assert gamma == pytest.approx(0.5, abs=1e-10)
    assert alpha == pytest.approx(0.2, abs=1e-10)
    assert nu_bar == pytest.approx(0.4, abs=1e-10)
    assert nu <= gamma + alpha + 1e-12


def test_estimates_zero_without_heterogeneity():
    pop = make_population(3, 4, 2, 2, seed=0)
    probes = [np.full(3, float(j)) for j in range(5)]
    assert estimate_heterogeneity(pop, probes) == pytest.approx((0, 0, 0, 0), abs=1e-14)


def test_nu_bounded_on_generic_population():
    pop = random_population(4, 6, 2, B=2, seed=5)
    probes = [np.random.default_rng(j).standard_normal(4) for j in range(6)]
    gamma, alpha, nu, _ = estimate_heterogeneity(pop, probes)
    assert nu <= gamma + alpha + 1e-12


def test_estimate_needs_five_probes():
    pop = make_population(3, 4, 2, seed=0)
    with pytest.raises(ValueError):
        estimate_heterogeneity(pop, [np.zeros(3)] * 4)


# cost models


def test_gd_cost_examples():
    k1 = cost_gd(0.1, 1.0, 12, 1, 2, 1.0)
    k2 = cost_gd(0.1, 1.0, 12, 2, 2, 1.0)
    assert k1 == pytest.approx(5 * 10 / 11)
    assert k2 == pytest.approx(8.0)
    assert k2 > k1
    assert cost_gd(0.1, 1.0, 12, 6, 2, 1.0) == 0
    assert cost_gd(0.1, 1.0, 12, 2, 2, 0.0) == 0


def test_exact_fraction_arithmetic():
    assert cost_gd(Fraction(1, 10), 1, 12, 1, 2, 1) == Fraction(50, 11)
    assert finite_population_factor(12, 12, 1) == 0


def test_cost_errors():
    with pytest.raises(ValueError):
        cost_gd(0.1, 1.0, 12, 2, 7, 1.0)
    with pytest.raises(ValueError):
        cost_gd(0.1, 1.0, 12, 5, 1, 1.0)
    with pytest.raises(ValueError):
        cost_gd(0.0, 1.0, 12, 2, 2, 1.0)
    with pytest.raises(ValueError):
        cost_sgd(0.1, 1.0, 12, 2, 2, 1.0, 1.0, 0)


def test_sgd_cost_examples():
    assert cost_sgd(0.1, 1.0, 12, 3, 4, 1.0, 4.0, 10) == pytest.approx(3.0)
    assert cost_sgd(0.1, 1.0, 12, 2, 2, 1.0, 0.0, 5) == cost_gd(0.1, 1.0, 12, 2, 2, 1.0)


def test_gd_cycling_sweep_holds_when_n_divides_m():
    holds, checked, failures = gd_cycling_sweep()
    assert holds and checked > 0 and failures == []


def test_gd_cycling_fails_off_divisible_pairs():
    # documents why the sweep is restricted: the ordering breaks when N does not divide M
    holds, _, failures = gd_cycling_sweep(max_M=8, require_divisible=False)
    assert not holds and (8, 3, 2) in failures


def test_cost_grids():
    assert sgd_cycling_grid(200, seed=1) == (200, 200)
    assert ssgd_vs_rr_grid(200, seed=1) == (200, 200)


def test_predicate_examples():
    assert ssgd_beats_gd_predicate(4, 0.0, 0.0)
    assert not ssgd_beats_gd_predicate(1, 0.0, 0.0)
    assert not ssgd_beats_gd_predicate(4, 0.6, 0.0)


def test_local_rr_threshold_example():
    t = local_rr_threshold(2, 4, 0.5, 0.2, 0.4)
    assert t == pytest.approx(2 * (1 + 0.2 / 0.7))
    assert t == pytest.approx(2.571, abs=1e-3)
    assert 3 > t
    assert local_rr_threshold(2, 4, 0.0, 0.0, 0.0) == 2
    assert local_rr_threshold(2, 4, 0.0, 0.1, 0.0) == math.inf


def test_report_consistent_configuration():
    # M=3 cannot be split into groups of N=2; M=4 with K_bar=2 keeps the threshold comparison
    rep = cost_ssgd_vs_alternatives(0.1, 1.0, 4, 2, 2, 4, 0.5, 0.2, 0.7, 0.4)
    verdicts = {v.comparison: v.holds for v in rep.verdicts}
    assert verdicts["SSGD beats LocalRR (threshold)"]
    assert verdicts["SSGD cheaper than LocalRR (numeric)"]
    assert verdicts["GD cost vanishes at K_bar=M/N"]
    assert not rep.degenerate
    assert "SSGD@K_bar" in rep.to_text()


def test_report_b1_degenerate():
    rep = cost_ssgd_vs_alternatives(0.1, 1.0, 6, 3, 2, 1, 0.3, 0.1, 0.4, 0.0)
    assert rep.degenerate
    assert "degenerate" in rep.to_text()
    assert rep.costs["SSGD@K_bar"] == pytest.approx(cost_ssgd_full_group(0.1, 1.0, 6, 3, 1, 0.1, 0.4, 0.0))


def test_report_requires_full_group():
    with pytest.raises(ValueError):
        cost_ssgd_vs_alternatives(0.1, 1.0, 12, 2, 2, 4, 0.5, 0.2, 0.7, 0.4)


def test_predicate_implies_cost_ordering_when_groups_large():
    # K_bar/sqrt(M) = sqrt(M)/N >= 1 needs M >= N^2; below that the implication can fail
    rng = np.random.default_rng(0)
    checked = 0
    for _ in range(1000):
        N = int(rng.integers(1, 6))
        K_bar = int(rng.integers(N, N + 20))
        M = N * K_bar
        B = int(rng.integers(2, 65))
        nu, nu_bar = rng.uniform(0, 1, size=2)
        alpha = rng.uniform(0, 1)
        if ssgd_beats_gd_predicate(B, nu, nu_bar):
            checked += 1
            assert cost_ssgd_full_group(0.1, 1.0, M, K_bar, B, alpha, nu, nu_bar) < cost_gd_full_group(0.1, 1.0, M, K_bar, alpha)
    assert checked > 50


# rate fitting


def test_fit_rate_planted_exponents():
    ts = [100, 200, 400, 800, 1600, 3200]
    fit = fit_rate([(t, 7 / t**2) for t in ts])
    assert fit.slope == pytest.approx(-2.0, abs=1e-9)
    assert fit.r2 == pytest.approx(1.0, abs=1e-12)
    assert fit_rate([(t, 3 / t) for t in ts]).slope == pytest.approx(-1.0, abs=1e-9)
    assert fit.window[0][0] == 200


def test_fit_rate_flags_divergence():
    ts = [100, 200, 400, 800, 1600, 3200]
    fit = fit_rate([(t, 1 / t if t != 400 else math.nan) for t in ts])
    assert fit.flagged and fit.excluded[0][0] == 400
    assert fit.slope == pytest.approx(-1.0, abs=1e-9)


def test_fit_rate_errors():
    with pytest.raises(ValueError):
        fit_rate([(100, 1.0), (200, 0.5), (400, 0.25)])
    with pytest.raises(ValueError):
        fit_rate([(100, 1.0), (110, 0.5), (120, 0.25), (130, 0.1)])
    with pytest.raises(ValueError):
        fit_rate([(100, 1.0), (100, 0.5), (400, 0.25), (800, 0.1)])


# oscillation counter


def test_sign_changes_alternating_and_monotone():
    assert sign_changes_per_cycle([(-1) ** t for t in range(21)], 4) == 3
    assert sign_changes_per_cycle(list(range(21)), 4) == 0
    assert sign_changes_per_cycle([0, 1, 1, 0, 0, 1], 5, last=1) == 2


def test_sign_changes_errors():
    with pytest.raises(ValueError):
        sign_changes_per_cycle([1.0, 2.0], 4)
    with pytest.raises(ValueError):
        sign_changes_per_cycle([1.0] * 10, 0)


# moment propagation


def test_expected_gap_is_exact_for_full_participation_gd():
    pop = make_population(3, 4, 2, 1, 0.3, 0.2, 0.0, (1, 2, 3), seed=0)
    log = run(RunConfig(pop, "GD", eta=0.1, K=5, N=2))
    np.testing.assert_allclose(expected_loss_gap(pop, "GD", 0.1, 5, 2), log.loss_gaps, rtol=1e-10, atol=1e-14)


@pytest.mark.parametrize("mode", ["GD", "SGD"])
def test_expected_gap_matches_monte_carlo(mode):
    pop = make_population(3, 6, 2, 4, 0.4, 0.3, 0.5, (1, 2, 3), seed=2)
    K, reps = 4, 2000
    runs = np.array([run(RunConfig(pop, mode, eta=0.1, K=K, N=1, tau=2, minibatch=1, seed=s)).loss_gaps for s in range(reps)])
    exact = expected_loss_gap(pop, mode, 0.1, K, 1, tau=2, minibatch=1)
    se = runs.std(axis=0) / math.sqrt(reps)
    assert np.all(np.abs(runs.mean(axis=0) - exact) <= 4 * se + 1e-12)


def test_expected_gap_rejects_unsupported():
    pop = make_population(3, 4, 2, 2, seed=0)
    with pytest.raises(ValueError):
        expected_loss_gap(pop, "SSGD", 0.1, 2, 1)
    perturbed = make_population(3, 4, 2, 1, seed=0, hessian_perturbation=0.2)
    with pytest.raises(ValueError):
        expected_loss_gap(perturbed, "GD", 0.1, 2, 1)

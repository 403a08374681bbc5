import math

import numpy as np
import pytest

from cycfed.engine import (
    ClientView,
    DivergenceError,
    RunConfig,
    RunLog,
    local_update_gd,
    local_update_sgd,
    local_update_ssgd,
    run,
    server_round,
    theoretical_step_size,
)
from cycfed.quadratic_lab import ClientQuadratic, QuadraticComponent, QuadraticPopulation, make_population
from cycfed.scheduling import RngStream


def identity_population(b_vectors, d=2):
    clients = [ClientQuadratic(tuple(QuadraticComponent(np.eye(d), np.asarray(b, float), 0.0) for b in comps), m) for m, comps in enumerate(b_vectors)]
    return QuadraticPopulation(clients, [list(range(len(clients)))])


def test_gd_step_examples():
    pop = identity_population([[[0.0, 0.0]]])
    view = ClientView(pop, 0)
    w = np.array([2.0, 0.0])
    np.testing.assert_array_equal(local_update_gd(view, w, 0.5), [1.0, 0.0])
    np.testing.assert_array_equal(local_update_gd(view, w, 0.0), w)


def test_full_participation_round_is_global_gd_step():
    pop = make_population(4, 6, 1, 1, 0.7, 0.0, 0.0, (1, 2, 3, 4), seed=2)
    w = np.array([0.5, -1.0, 2.0, 0.0])
    w_new, err = server_round(pop, w, range(6), "GD", 0.1)
    np.testing.assert_allclose(w_new, w - 0.1 * pop.gradient(w), atol=1e-14)
    assert err <= 1e-12


def test_sgd_two_steps_closed_form():
    h = np.array([[2.0, 0.3], [0.3, 1.0]])
    b = np.array([0.4, -0.2])
    pop = QuadraticPopulation([ClientQuadratic((QuadraticComponent(h, b, 0.0),), 0)], [[0]])
    w = np.array([1.0, 1.0])
    eta = 0.1
    out = local_update_sgd(ClientView(pop, 0), w, eta, 2, 1, RngStream(0))
    expected = w - eta * (2 * np.eye(2) - eta * h) @ (h @ w - b)
    np.testing.assert_allclose(out, expected, atol=1e-15)


def test_sgd_full_batch_tau1_matches_gd_bitwise():
    pop = make_population(5, 4, 2, 4, 0.3, 0.2, 0.5, seed=1)
    view = ClientView(pop, 3)
    w = np.linspace(-1, 1, 5)
    assert np.array_equal(local_update_sgd(view, w, 0.2, 1, 4, RngStream(5)), local_update_gd(view, w, 0.2))


def test_sgd_zero_variance_ignores_seed():
    pop = make_population(4, 4, 2, 3, 0.3, 0.0, 0.0, seed=1)
    c = run(RunConfig(pop, "SGD", eta=0.1, K=5, N=2, tau=3, minibatch=1, seed=1))
    d = run(RunConfig(pop, "SGD", eta=0.1, K=5, N=2, tau=3, minibatch=1, seed=2))
    np.testing.assert_array_equal(c.final_model, d.final_model)


def test_ssgd_b1_equals_gd():
    pop = make_population(4, 4, 2, 1, 0.3, 0.1, 0.0, seed=0)
    view = ClientView(pop, 1)
    w = np.ones(4)
    assert np.array_equal(local_update_ssgd(view, w, 0.3, [0]), local_update_gd(view, w, 0.3))


def test_ssgd_order_difference_two_step_oracle():
    h = np.array([[1.5, 0.2], [0.2, 0.5]])
    z = np.array([0.3, -0.1])
    comps = (QuadraticComponent(h, z, 0.0), QuadraticComponent(h, -z, 0.0))
    pop = QuadraticPopulation([ClientQuadratic(comps, 0)], [[0]])
    view = ClientView(pop, 0)
    w = np.array([0.7, -0.4])
    eta = 0.2
    a = local_update_ssgd(view, w, eta, [0, 1])
    b = local_update_ssgd(view, w, eta, [1, 0])
    # w01 - w10 = eta^2 H (b_1 - b_0) for components H w - b_l
    np.testing.assert_allclose(a - b, eta**2 * h @ (-z - z), atol=1e-15)
    assert np.linalg.norm(a - b) > 0


def test_ssgd_identical_components_order_free():
    h = np.diag([1.0, 2.0])
    comps = tuple(QuadraticComponent(h, np.array([0.1, 0.2]), 0.0) for _ in range(3))
    pop = QuadraticPopulation([ClientQuadratic(comps, 0)], [[0]])
    view = ClientView(pop, 0)
    w = np.array([1.0, -1.0])
    np.testing.assert_allclose(local_update_ssgd(view, w, 0.1, [2, 0, 1]), local_update_ssgd(view, w, 0.1, [0, 1, 2]), atol=1e-15)


def test_ssgd_rejects_bad_permutation():
    pop = make_population(4, 4, 2, 2, 0.0, 0.0, 0.1, seed=0)
    with pytest.raises(ValueError):
        local_update_ssgd(ClientView(pop, 0), np.zeros(4), 0.1, [0, 0])


def test_run_record_count_and_accounting():
    pop = make_population(5, 6, 3, 4, 0.3, 0.2, 0.1, seed=3)
    for mode, per in (("GD", 2), ("SGD", 2 * 3), ("SSGD", 2 * 4)):
        log = run(RunConfig(pop, mode, eta=0.05, K=4, N=2, tau=3, minibatch=2, seed=1))
        assert len(log) == 12
        assert [r.t for r in log.records] == list(range(12))
        assert [r.evals for r in log.records] == [per * (t + 1) for t in range(12)]
        assert log.meta["max_aggregation_error"] <= 1e-12


def test_zero_epochs():
    pop = make_population(4, 4, 2, seed=0)
    w0 = np.arange(4.0)
    log = run(RunConfig(pop, "GD", eta=0.1, K=0, N=1, w0=w0))
    assert len(log) == 0
    np.testing.assert_array_equal(log.final_model, w0)


def test_determinism_and_csv_round_trip():
    pop = make_population(5, 6, 3, 3, 0.3, 0.2, 0.4, seed=3)
    cfg = dict(mode="SSGD", eta=0.05, K=5, N=1, seed=8)
    a, b = run(RunConfig(pop, **cfg)), run(RunConfig(pop, **cfg))
    assert a.to_csv() == b.to_csv()
    parsed = RunLog.read_csv(a.to_csv())
    assert parsed == a.records
    assert a.to_csv().splitlines()[0] == "t,k,i,clients,loss_gap,grad_norm,evals"


def test_monotone_progress_without_heterogeneity():
    pop = make_population(4, 6, 3, 1, 0.0, 0.0, 0.0, (1, 2, 3, 4), seed=1)
    log = run(RunConfig(pop, "GD", eta=1 / pop.constants.L, K=10, N=1, w0=np.full(4, 3.0)))
    gaps = log.loss_gaps
    assert np.all(np.diff(gaps) <= 1e-15)


def test_exponential_contraction_matches_spectral_factor():
    pop = make_population(4, 4, 1, 1, 0.5, 0.0, 0.0, (1.0, 9.5, 10.0, 10.5), seed=1)
    eta = 0.1
    log = run(RunConfig(pop, "GD", eta=eta, K=40, N=4))
    rho = max(abs(1 - eta * np.linalg.eigvalsh(pop.mean_hessian)))
    ratios = log.loss_gaps[6:] / log.loss_gaps[5:-1]
    assert np.max(np.abs(ratios - rho**2)) <= 1e-10


def test_divergence_guard():
    pop = make_population(3, 2, 1, hessian_spectrum=(1, 2, 3), seed=0)
    with pytest.raises(DivergenceError) as exc:
        run(RunConfig(pop, "GD", eta=5.0, K=200, N=2, w0=np.ones(3)))
    assert exc.value.round_index is not None


def test_config_validation():
    pop = make_population(3, 4, 2, seed=0)
    with pytest.raises(ValueError):
        RunConfig(pop, "Adam")
    with pytest.raises(ValueError):
        RunConfig(pop, "GD", eta=0)
    with pytest.raises(ValueError):
        run(RunConfig(pop, "GD", eta=0.1, K=1, N=3))
    with pytest.raises(ValueError):
        run(RunConfig(pop, "GD", eta=0.1, K=1, N=1, w0=np.zeros(2)))


def test_shuffled_order_recorded():
    pop = make_population(5, 6, 3, seed=0)
    log = run(RunConfig(pop, "GD", eta=0.1, K=2, N=1, order="shuffled", seed=4))
    order = log.meta["order"]
    assert sorted(order) == [0, 1, 2]
    for r in log.records:
        assert set(r.clients) <= set(pop.groups[order[r.i - 1]])


class _Const:
    L, mu = 2.0, 1.0


def test_theoretical_step_size_example():
    step = theoretical_step_size("GD", _Const, M=12, K_bar=3, N=4, T=300)
    assert step.eta == pytest.approx(math.log(12 * 300**2 / 9) / 1200)
    assert step.eta == pytest.approx(9.75e-3, rel=1e-3)
    assert step.eta_local == pytest.approx(4 * step.eta)


def test_step_size_modes():
    gd = theoretical_step_size("GD", _Const, 12, 3, 4, T=300)
    sgd = theoretical_step_size("SGD", _Const, 12, 3, 4, tau=1, T=300)
    assert sgd.eta == gd.eta
    assert theoretical_step_size("SGD", _Const, 12, 3, 4, tau=5, T=300).eta == pytest.approx(gd.eta / 5)
    ssgd = theoretical_step_size("SSGD", _Const, 12, 3, 4, B=8, T=300)
    assert ssgd.eta == pytest.approx(math.log(12 * 8 * 300**2 / 9) / (8 * 300))
    assert ssgd.eta_local == ssgd.eta


def test_step_size_bound_warning():
    class Stiff:
        L, mu = 4.0, 1.0

    relaxed = theoretical_step_size("GD", _Const, 12, 3, 4, T=1000)
    stiff = theoretical_step_size("GD", Stiff, 12, 3, 4, T=1000)
    assert stiff.required_T == pytest.approx(2 * relaxed.required_T)
    assert relaxed.below_bound == (1000 < relaxed.required_T)
    assert stiff.below_bound == (1000 < stiff.required_T)
    big = theoretical_step_size("GD", _Const, 12, 3, 4, T=10**6)
    assert not big.below_bound


def test_step_size_rejects_bad_constants():
    class Bad:
        L, mu = 1.0, 0.0

    with pytest.raises(ValueError):
        theoretical_step_size("GD", Bad, 12, 3, 4, T=300)

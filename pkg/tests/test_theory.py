"""Tests for the covariance-mixture theory module.

Monte Carlo estimators are confronted with closed forms where they exist
and with frozen outputs of the deterministic quadrature in ``oracles.py``
otherwise (rerun those with ``BDGEOM_RUN_ORACLES=1``).
"""
import math
import os

import numpy as np
import pytest

from bdgeom.functionals import ConfigError, NeighborhoodMap, make_clique
from bdgeom.process import Density
from bdgeom.theory import (
    CovarianceModel,
    IntegralEstimate,
    TruncationError,
    _exclusive_harmonics,
    covariance_curve,
    exclusive_mixture_model,
    factorial_tail,
    mean_moment,
    mixture_model,
    overlap_moment,
    rate_integral,
    simulate_ou_superposition,
    statistic_mean_variance,
    unit_ball_volume,
    vacancy_rate_integral,
    vacancy_rate_integral_batch,
)

UNIFORM2 = Density("uniform", 2)

# frozen output of oracles.vacancy_rate_kappa_edges_j1_m1 (64/48/48/1024
# nodes); the band is the coarse-vs-fine quadrature gap
KAPPA_EDGES_J1_M1 = 0.00575949
KAPPA_BAND = 5.13e-8


# -- small helpers ------------------------------------------------------------


def test_unit_ball_volume():
    assert unit_ball_volume(1) == pytest.approx(2.0, rel=1e-14)
    assert unit_ball_volume(2) == pytest.approx(math.pi, rel=1e-14)
    assert unit_ball_volume(3) == pytest.approx(4.0 * math.pi / 3.0, rel=1e-14)


def test_factorial_tail():
    # sum_{m>0} x^m/m! = e^x - 1
    assert factorial_tail(0.7, 0) == pytest.approx(math.exp(0.7) - 1.0, rel=1e-12)
    assert factorial_tail(1.0, 20) == pytest.approx(2.050298068624661e-20, rel=1e-10)
    assert factorial_tail(2.0, 5) > factorial_tail(2.0, 10)


# -- plain moment integrals ----------------------------------------------------


def test_mean_moment_closed_form():
    r = 0.2
    est = mean_moment(make_clique(2), UNIFORM2, r, budget=50_000, seed=1)
    exact = math.pi * r * r
    assert abs(est.value - exact) < 4.0 * est.std_error + 1e-12
    assert est.method == "monte-carlo"


def test_overlap_moment_closed_forms():
    r = 0.2
    f = make_clique(2)
    # two pairs sharing a point: the two indicator events are independent
    est1 = overlap_moment(f, UNIFORM2, r, shared=1, budget=50_000, seed=2)
    assert abs(est1.value - (math.pi * r * r) ** 2) < 4.0 * est1.std_error + 1e-12
    # fully shared: the indicator squares to itself
    est2 = overlap_moment(f, UNIFORM2, r, shared=2, budget=50_000, seed=3)
    assert abs(est2.value - math.pi * r * r) < 4.0 * est2.std_error + 1e-12


def test_overlap_moment_shared_zero_squares_mean():
    f = make_clique(2)
    base = mean_moment(f, UNIFORM2, 0.15, budget=10_000, seed=4)
    est = overlap_moment(f, UNIFORM2, 0.15, shared=0, budget=10_000, seed=4)
    assert est.value == base.value**2


def test_overlap_moment_validates_shared():
    with pytest.raises(ValueError):
        overlap_moment(make_clique(2), UNIFORM2, 0.1, shared=3, budget=10)


def test_statistic_mean_variance_arithmetic():
    mean_mom = IntegralEstimate(0.5, 0.0, "closed-form")
    overlaps = {
        1: IntegralEstimate(0.25, 0.0, "closed-form"),
        2: IntegralEstimate(0.5, 0.0, "closed-form"),
    }
    mean, var = statistic_mean_variance(10.0, 2, mean_mom, overlaps)
    # lead = 100/2 = 50; var = 50 * (2 * 10 * 0.25 + 1 * 0.5)
    assert mean.value == pytest.approx(25.0, rel=1e-14)
    assert var.value == pytest.approx(275.0, rel=1e-14)


# -- scale-free rate integrals ---------------------------------------------------


def test_rate_integral_closed_forms():
    f = make_clique(2)
    est1 = rate_integral(f, UNIFORM2, shared=1)
    est2 = rate_integral(f, UNIFORM2, shared=2)
    assert est1.method == "closed-form" and est1.std_error == 0.0
    assert est1.value == pytest.approx(math.pi**2, rel=1e-14)
    assert est2.value == pytest.approx(math.pi, rel=1e-14)
    one_d = rate_integral(f, Density("uniform", 1), shared=1)
    assert one_d.value == pytest.approx(4.0, rel=1e-14)


def test_rate_integral_monte_carlo_agrees():
    f = make_clique(2)
    for shared, exact in ((1, math.pi**2), (2, math.pi)):
        est = rate_integral(
            f, UNIFORM2, shared, budget=100_000, seed=5, method="monte-carlo"
        )
        # the proposal ball fills the pair support, so the estimate is exact
        assert est.value == pytest.approx(exact, rel=1e-12)
        assert est.std_error == 0.0
    # 1d triples, fully shared: the overlap region {|y1|, |y2|, |y1-y2| <= 1}
    # has area 3, and here the indicator genuinely fluctuates
    est = rate_integral(
        make_clique(3), Density("uniform", 1), shared=3,
        budget=100_000, seed=5, method="monte-carlo",
    )
    assert est.std_error > 0
    assert abs(est.value - 3.0) < 4.0 * est.std_error


def test_rate_integral_validation():
    with pytest.raises(ValueError):
        rate_integral(make_clique(2), UNIFORM2, shared=0)
    with pytest.raises(ConfigError):
        rate_integral(make_clique(3), UNIFORM2, shared=1, method="closed-form")


# -- plain mixture model ---------------------------------------------------------


def test_plain_mixture_weights_closed_form():
    model = mixture_model(make_clique(2), UNIFORM2, gamma=1.0)
    # raw weights pi^2 and pi/2 normalize to pi/(pi + 1/2), (1/2)/(pi + 1/2)
    w1 = math.pi / (math.pi + 0.5)
    assert model.rates == [1, 2]
    assert model.weights[0] == pytest.approx(w1, rel=1e-13)
    assert model.weights[1] == pytest.approx(1.0 - w1, rel=1e-13)
    assert np.all(model.weight_errors == 0.0)
    assert model.curve(0.0)[0] == pytest.approx(1.0, rel=1e-13)
    expected = w1 / math.e + (1.0 - w1) / math.e**2
    assert model.curve(1.0)[0] == pytest.approx(expected, rel=1e-13)
    assert model.curve(1.0)[0] == pytest.approx(0.33595053, abs=1e-7)


def test_plain_mixture_regime_limits():
    # fast joint renewal dominates when points are dense, slow when sparse
    w1 = lambda g: math.pi / (math.pi + 1.0 / (2.0 * g))
    dense = mixture_model(make_clique(2), UNIFORM2, gamma=1000.0)
    sparse = mixture_model(make_clique(2), UNIFORM2, gamma=0.001)
    assert dense.weights[0] == pytest.approx(w1(1000.0), rel=1e-12)
    assert dense.weights[0] > 0.999
    assert sparse.weights[1] == pytest.approx(1.0 - w1(0.001), rel=1e-12)
    assert sparse.weights[1] > 0.99


def test_plain_mixture_monte_carlo_triangles():
    model = mixture_model(make_clique(3), UNIFORM2, gamma=1.0, budget=40_000, seed=6)
    assert model.rates == [1, 2, 3]
    assert np.all(model.weights > 0)
    assert model.weights.sum() == pytest.approx(1.0, rel=1e-12)
    assert np.all(np.isfinite(model.weight_errors))
    curve = model.curve([0.0, 0.5, 1.0, 2.0])
    assert np.all(np.diff(curve) < 0)


def test_plain_mixture_rejects_bad_gamma():
    with pytest.raises(ConfigError):
        mixture_model(make_clique(2), UNIFORM2, gamma=0.0)


# -- vacancy-weighted integrals ---------------------------------------------------


def test_vacancy_integral_matches_quadrature_oracle():
    est = vacancy_rate_integral(
        make_clique(2),
        NeighborhoodMap("balls"),
        UNIFORM2,
        gamma=1.0,
        shared=1,
        power=1,
        budget=6_000,
        vol_samples=3_000,
        seed=2,
    )
    tol = 3.0 * est.std_error + 0.01 * KAPPA_EDGES_J1_M1 + KAPPA_BAND
    assert abs(est.value - KAPPA_EDGES_J1_M1) < tol


def test_vacancy_integral_fully_shared_power_zero():
    # j = k = 1 with ball regions: every sample contributes e^(-2 gamma pi)
    gamma = 0.8
    est = vacancy_rate_integral(
        make_clique(1),
        NeighborhoodMap("balls"),
        UNIFORM2,
        gamma=gamma,
        shared=1,
        power=0,
        budget=400,
        vol_samples=20_000,
        seed=3,
    )
    exact = math.exp(-2.0 * gamma * math.pi)
    assert abs(est.value - exact) < 4.0 * est.std_error + 1e-3


def test_vacancy_batch_shared_zero_column():
    cols = vacancy_rate_integral_batch(
        make_clique(2),
        NeighborhoodMap("balls"),
        UNIFORM2,
        gamma=1.0,
        shared=0,
        max_power=2,
        budget=4_000,
        vol_samples=1_000,
        seed=4,
    )
    assert cols[0] is None
    assert cols[1] is not None and cols[1].value > 0
    assert cols[1].value > 2.0 * cols[1].std_error


def test_vacancy_integral_validation():
    f = make_clique(2)
    nb = NeighborhoodMap("balls")
    with pytest.raises(ValueError):
        vacancy_rate_integral(f, nb, UNIFORM2, 1.0, shared=0, power=0, budget=10)
    with pytest.raises(ValueError):
        vacancy_rate_integral_batch(f, nb, UNIFORM2, 1.0, shared=3, max_power=1, budget=10)


def test_harmonics_match_vacancy_table_without_cross_exclusion():
    """With mutual exclusion switched off the harmonic columns must equal
    the vacancy table entries times gamma^p / p! (identical sample paths)."""
    f = make_clique(2)
    nb = NeighborhoodMap("balls")
    gamma = 1.3
    for j in (0, 1, 2):
        seed = 7 + j
        signed, absed = _exclusive_harmonics(
            f, nb, UNIFORM2, gamma, j, 3,
            budget=2_000, vol_samples=500, seed=seed, cross_exclusion=False,
        )
        table = vacancy_rate_integral_batch(
            f, nb, UNIFORM2, gamma, j, 3, budget=2_000, vol_samples=500, seed=seed
        )
        for p in range(4):
            if j == 0 and p == 0:
                assert signed[p] is None and table[p] is None
                continue
            expect = table[p].value * gamma**p / math.factorial(p)
            assert signed[p].value == pytest.approx(expect, rel=1e-9, abs=1e-300)
            assert absed[p].value == pytest.approx(expect, rel=1e-9, abs=1e-300)


# -- exclusive mixture model -----------------------------------------------------


def test_exclusive_mixture_basicisolated_points():
    model = exclusive_mixture_model(
        make_clique(1),
        NeighborhoodMap("balls"),
        UNIFORM2,
        gamma=1.0,
        budget=4_000,
        vol_samples=1_000,
        max_rate=12,
        tail_tol=1e-2,
        seed=0,
    )
    assert model.kind == "exclusive"
    assert model.rates == list(range(1, 13))
    assert model.weights.sum() == pytest.approx(1.0, rel=1e-12)
    assert model.curve(0.0)[0] == pytest.approx(1.0, rel=1e-12)


def test_cross_exclusion_changes_the_model():
    kwargs = dict(
        gamma=1.0, budget=4_000, vol_samples=1_000, max_rate=16, tail_tol=5e-2, seed=0
    )
    f = make_clique(2)
    nb = NeighborhoodMap("balls")
    corrected = exclusive_mixture_model(f, nb, UNIFORM2, **kwargs)
    background = exclusive_mixture_model(
        f, nb, UNIFORM2, cross_exclusion=False, **kwargs
    )
    assert not np.allclose(corrected.weights, background.weights, atol=1e-3)
    # mutual exclusion steepens the curve: less weight on the slowest rate
    assert corrected.weights[0] < background.weights[0]


def test_exclusive_mixture_truncation_error():
    with pytest.raises(TruncationError):
        exclusive_mixture_model(
            make_clique(3),
            NeighborhoodMap("balls"),
            UNIFORM2,
            gamma=1.0,
            budget=1_500,
            vol_samples=400,
            max_rate=8,
            tail_tol=1e-12,
            seed=1,
        )


def test_exclusive_mixture_rejects_bad_gamma():
    with pytest.raises(ConfigError):
        exclusive_mixture_model(
            make_clique(2), NeighborhoodMap("balls"), UNIFORM2, gamma=-1.0, budget=100
        )


# -- covariance model object -----------------------------------------------------


def make_toy_model():
    return CovarianceModel(
        kind="plain",
        functional="clique:2",
        gamma=1.0,
        k=2,
        rates=[1, 2],
        weights=np.array([0.75, 0.25]),
        weight_errors=np.array([0.01, 0.01]),
    )


def test_model_round_trip(tmp_path):
    model = make_toy_model()
    again = CovarianceModel.from_dict(model.to_dict())
    assert again.rates == model.rates
    assert np.array_equal(again.weights, model.weights)
    path = tmp_path / "model.json"
    model.save(str(path))
    loaded = CovarianceModel.load(str(path))
    assert np.array_equal(loaded.weights, model.weights)
    assert loaded.kind == "plain" and loaded.k == 2


def test_model_curve_properties():
    model = make_toy_model()
    assert model.curve(0.0)[0] == pytest.approx(1.0, rel=1e-14)
    assert model.curve(-1.5)[0] == model.curve(1.5)[0]
    grid = model.curve(np.linspace(0.0, 3.0, 13))
    assert np.all(np.diff(grid) < 0)
    assert np.allclose(model.amplitudes() ** 2, model.weights)
    assert np.array_equal(covariance_curve(model, [0.5]), model.curve([0.5]))


# -- OU superposition sampler ----------------------------------------------------


def test_ou_single_rate_covariance():
    model = CovarianceModel(
        kind="plain", functional="clique:2", gamma=1.0, k=2,
        rates=[2], weights=np.array([1.0]), weight_errors=np.array([0.0]),
    )
    times = np.linspace(0.0, 1.0, 11)
    paths = simulate_ou_superposition(model, times, seed=8, n_paths=20_000)
    assert paths.shape == (20_000, 11)
    assert np.var(paths[:, 0]) == pytest.approx(1.0, abs=0.03)
    corr = np.corrcoef(paths[:, 0], paths[:, 5])[0, 1]
    assert corr == pytest.approx(math.exp(-2.0 * 0.5), abs=0.02)


def test_ou_superposition_covariance():
    model = CovarianceModel(
        kind="plain", functional="clique:2", gamma=1.0, k=2,
        rates=[1, 3], weights=np.array([0.5, 0.5]), weight_errors=np.zeros(2),
    )
    times = np.array([0.0, 0.3])
    paths = simulate_ou_superposition(model, times, seed=9, n_paths=30_000)
    target = 0.5 * math.exp(-0.3) + 0.5 * math.exp(-0.9)
    cov = np.mean(paths[:, 0] * paths[:, 1])
    assert cov == pytest.approx(target, abs=0.03)


def test_ou_deterministic_and_validated():
    model = make_toy_model()
    times = [0.0, 0.5, 1.0]
    a = simulate_ou_superposition(model, times, seed=10, n_paths=3)
    b = simulate_ou_superposition(model, times, seed=10, n_paths=3)
    assert np.array_equal(a, b)
    with pytest.raises(ValueError):
        simulate_ou_superposition(model, [0.0, 0.0, 1.0], seed=0)


# -- oracle regeneration (slow; opt-in) -------------------------------------------


@pytest.mark.skipif(
    os.environ.get("BDGEOM_RUN_ORACLES") != "1",
    reason="slow deterministic quadrature; set BDGEOM_RUN_ORACLES=1 to rerun",
)
def test_oracle_quadrature_reproduces_frozen_value():
    from oracles import vacancy_rate_kappa_edges_j1_m1

    fine = vacancy_rate_kappa_edges_j1_m1(64, 48, 48, 1024)
    assert fine == pytest.approx(KAPPA_EDGES_J1_M1, abs=1e-7)

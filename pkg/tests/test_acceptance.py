"""Acceptance suite: one test per criterion, each at its stated tolerance.

Every test records a one-line pass/fail verdict that is echoed in the pytest
terminal summary (and printed directly when run with ``-s``).
"""

import itertools
import math
import time

import numpy as np
import pytest

from rand_adjust import (
    Dataset,
    EstimatorConfig,
    ModelSpec,
    SimulationPlan,
    SyntheticPopulation,
    exhaustive_bias,
    generate_population,
    lin_interactions,
    oaxaca_blinder,
    run,
)
from rand_adjust.models import FAMILIES, fit_arrays, fit_isotonic
from rand_adjust.simulate import ob

from conftest import random_dataset
from test_models import _family_data, monotone_projection

DIM = EstimatorConfig("dim", "difference_in_means")


@pytest.mark.criterion(1, "OLS Oaxaca-Blinder equals interacted regression")
def test_c01_lin_equivalence(criterion):
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    worst = 0.0
    ols = ModelSpec("ols")
    for _ in range(100):
        ds = random_dataset(rng, n=50, d=3)
        a = oaxaca_blinder(ds, ols, ols).tau_hat
        b = lin_interactions(ds).tau_hat
        worst = max(worst, abs(a - b))
    elapsed = time.perf_counter() - t0
    criterion.note(f"max |diff| {worst:.2e} over 100 datasets, {elapsed:.2f}s")
    assert worst <= 1e-8
    assert elapsed < 5


@pytest.mark.criterion(2, "prediction unbiasedness, every family")
def test_c02_prediction_unbiased(criterion):
    rng = np.random.default_rng(202)
    t0 = time.perf_counter()
    worst = {}
    for family in FAMILIES:
        w = 0.0
        for _ in range(100):
            X, y = _family_data(family, rng, int(rng.integers(20, 120)))
            m = fit_arrays(ModelSpec(family), X, y, has_intercept=True)
            w = max(w, abs(np.mean(m.fitted - y)) / (1 + abs(np.mean(y))))
        worst[family] = w
    elapsed = time.perf_counter() - t0
    top = max(worst.values())
    criterion.note(f"max scaled |mean residual| {top:.2e} over 700 fits, {elapsed:.2f}s")
    assert top <= 1e-8
    assert elapsed < 10


@pytest.mark.criterion(3, "isotonic fit equals brute-force cone projection")
def test_c03_isotonic_oracle(criterion):
    rng = np.random.default_rng(303)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(200):
        n = int(rng.integers(1, 13))
        x = rng.permutation(n).astype(float) + rng.uniform(0, 0.5, n)
        y = rng.normal(size=n) * rng.choice([0.1, 1.0, 10.0])
        m = fit_isotonic(x, y)
        order = np.argsort(x)
        oracle = monotone_projection(y[order])
        worst = max(worst, float(np.max(np.abs(m.fitted[order] - oracle))))
    elapsed = time.perf_counter() - t0
    criterion.note(f"max coordinate error {worst:.2e} over 200 instances, {elapsed:.2f}s")
    assert worst <= 1e-8
    assert elapsed < 30


@pytest.mark.criterion(4, "exact unbiasedness of difference in means")
def test_c04_exact_unbiasedness(criterion):
    rng = np.random.default_rng(404)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(20):
        X = np.column_stack([rng.normal(size=(8, 2)), np.ones(8)])
        y0 = rng.normal(size=8) * 5
        pop = SyntheticPopulation(X, y0 + rng.normal(size=8) + 2, y0, has_intercept=True)
        res = exhaustive_bias(pop, DIM, 4)
        assert res.assignments == 70
        worst = max(worst, abs(res.bias))
    elapsed = time.perf_counter() - t0
    criterion.note(f"max |bias| {worst:.2e} over 20 populations, {elapsed:.2f}s")
    assert worst <= 1e-12
    assert elapsed < 5


@pytest.mark.criterion(5, "finite-population variance of an arm mean")
def test_c05_finite_population_variance(criterion):
    rng = np.random.default_rng(505)
    n, n1, R = 200, 100, 50_000
    a = np.exp(rng.normal(size=n))
    pop = SyntheticPopulation(np.ones((n, 1)), a, np.zeros(n), has_intercept=True)
    t0 = time.perf_counter()
    rep = run(SimulationPlan(pop, n1, R, 55, (DIM,)))
    elapsed = time.perf_counter() - t0
    p = n1 / n
    var = ((1 - p) / p) * (1 / (n - 1)) * (1 / n) * np.sum((a - a.mean()) ** 2)
    rel = abs(rep["dim"].sd - math.sqrt(var)) / math.sqrt(var)
    criterion.note(f"SD {rep['dim'].sd:.5f} vs closed form {math.sqrt(var):.5f} "
                   f"(rel err {rel:.3%}), {elapsed:.1f}s")
    assert rel < 0.05
    assert elapsed < 60


@pytest.fixture(scope="module")
def poisson_study():
    pop = generate_population("poisson_counts", 300, effect=0.5, seed=1)
    plan = SimulationPlan(pop, 150, 5000, 606,
                          (ob("poisson", "poisson"), ob("ols", "ols")))
    t0 = time.perf_counter()
    rep = run(plan)
    return rep, time.perf_counter() - t0


@pytest.mark.criterion(6, "coverage and width, Poisson vs OLS adjustment")
def test_c06_poisson_vs_ols(criterion, poisson_study):
    rep, elapsed = poisson_study
    pois, ols = rep["poisson"], rep["ols"]
    ratio = pois.mean_width / ols.mean_width
    criterion.note(f"coverage poisson {pois.coverage:.4f}, ols {ols.coverage:.4f}; "
                   f"width ratio {ratio:.3f}; {elapsed:.1f}s")
    assert pois.successes == ols.successes == 5000
    assert 0.93 <= pois.coverage <= 0.97
    assert 0.93 <= ols.coverage <= 0.97
    assert ratio < 0.9
    assert elapsed < 300


@pytest.mark.criterion(7, "skewed outcomes: ols2 <= debiased <= plain OLS widths")
def test_c07_skewed_ordering(criterion):
    pop = generate_population("lognormal_skewed", 1000, effect=0.2, seed=3)
    est = (ob("ols", "ols"),
           ob("debiased", "log_ols_debiased", log_covariates=True),
           ob("ols2", "log_ols_calibrated", log_covariates=True))
    t0 = time.perf_counter()
    rep = run(SimulationPlan(pop, 500, 5000, 707, est))
    elapsed = time.perf_counter() - t0
    w = {k: rep[k].mean_width for k in ("ols2", "debiased", "ols")}
    cov = {k: rep[k].coverage for k in w}
    criterion.note("widths " + ", ".join(f"{k} {v:.3f}" for k, v in w.items())
                   + "; coverage " + ", ".join(f"{k} {v:.4f}" for k, v in cov.items())
                   + f"; {elapsed:.1f}s")
    assert w["ols2"] <= w["debiased"] <= w["ols"]
    assert min(cov.values()) >= 0.93
    assert elapsed < 300


@pytest.mark.criterion(8, "isotonic adjustment coverage at n=1200")
def test_c08_isotonic_coverage(criterion):
    pop = generate_population("monotone_bounded", 1200, effect=0.0, seed=1)
    assert np.array_equal(pop.y1, pop.y0)
    t0 = time.perf_counter()
    rep = run(SimulationPlan(pop, 600, 5000, 808, (ob("isotonic", "isotonic"),)))
    elapsed = time.perf_counter() - t0
    s = rep["isotonic"]
    criterion.note(f"coverage {s.coverage:.4f}, bias {s.bias:.2e}, {elapsed:.1f}s")
    assert s.successes == 5000
    assert s.coverage >= 0.93
    assert elapsed < 600


@pytest.mark.criterion(9, "normality of the Poisson-adjusted replicates")
def test_c09_normality(criterion, poisson_study):
    rep, _ = poisson_study
    s = rep["poisson"]
    criterion.note(f"KS {s.ks_distance:.4f}, skewness {s.skewness:+.4f}")
    assert s.ks_distance < 0.03
    assert abs(s.skewness) < 0.15


def _separable_1d(x, y):
    """Threshold (quasi-)separability of 0/1 labels on a line, either direction."""
    ones, zeros = x[y == 1], x[y == 0]
    if len(ones) == 0 or len(zeros) == 0:
        return True
    return zeros.max() <= ones.min() or ones.max() <= zeros.min()


@pytest.mark.criterion(10, "separation count equals brute-force count")
def test_c10_separation_count(criterion):
    x = np.arange(12) - 5.5
    y1 = (x > 0).astype(float)
    y0 = (x > 1).astype(float)
    y1[np.isin(x, (-4.5, 3.5))] = 1 - y1[np.isin(x, (-4.5, 3.5))]
    y0[np.isin(x, (-2.5, 2.5))] = 1 - y0[np.isin(x, (-2.5, 2.5))]
    pop = SyntheticPopulation(np.column_stack([x, np.ones(12)]), y1, y0, has_intercept=True)
    expected = 0
    for treated in itertools.combinations(range(12), 6):
        z = np.isin(np.arange(12), treated)
        expected += _separable_1d(x[z], y1[z]) or _separable_1d(x[~z], y0[~z])
    t0 = time.perf_counter()
    res = exhaustive_bias(pop, ob("logit", "logistic"), 6)
    elapsed = time.perf_counter() - t0
    got = res.failures.get("Separation", 0)
    criterion.note(f"Separation in {got} of {res.assignments} assignments, "
                   f"brute force {expected}; other failures {res.assignments - res.successes - got}"
                   f"; {elapsed:.1f}s")
    assert 0 < expected < res.assignments
    assert got == expected
    assert res.successes + got == res.assignments
    assert elapsed < 60


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))

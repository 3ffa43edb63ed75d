import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rand_adjust import (
    EstimatorConfig,
    ModelSpec,
    SimulationPlan,
    SyntheticPopulation,
    exhaustive_bias,
    generate_population,
    population_oracle,
    run,
)
from rand_adjust.errors import PlanValidationError
from rand_adjust.simulate import POPULATION_KINDS, ob, plan_from_dict

from conftest import write_csv

DIM = EstimatorConfig("dim", "difference_in_means")
CONST, OLS = ModelSpec("constant"), ModelSpec("ols")


def random_population(rng, n, d=1, intercept=True):
    X = rng.normal(size=(n, d))
    y0 = X @ rng.normal(size=d) + rng.normal(size=n)
    y1 = y0 + rng.normal(size=n) + 1.0
    if intercept:
        X = np.column_stack([X, np.ones(n)])
    return SyntheticPopulation(X, y1, y0, has_intercept=intercept)


# -- exhaustive oracles ---------------------------------------------------------

def test_dim_exactly_unbiased(rng):
    for n, n1 in ((8, 4), (6, 3), (7, 2)):
        res = exhaustive_bias(random_population(rng, n), DIM, n1)
        assert res.assignments == math.comb(n, n1)
        assert abs(res.bias) <= 1e-12


def test_null_effect_has_zero_mean(rng):
    y = rng.normal(size=8)
    pop = SyntheticPopulation(np.ones((8, 1)), y, y, has_intercept=True)
    res = exhaustive_bias(pop, DIM, 4)
    assert abs(res.mean) <= 1e-12


def test_ols_exhaustive_bias_matches_bruteforce():
    pop = generate_population("linear_gaussian", 10, effect=1.0, seed=3)
    res = exhaustive_bias(pop, ob("ols", "ols"), 5)
    X = pop.covariates
    taus = []
    for treated in itertools.combinations(range(10), 5):
        z = np.zeros(10, dtype=bool)
        z[list(treated)] = True
        pred = {}
        for t, mask, y in ((1, z, pop.y1), (0, ~z, pop.y0)):
            beta = np.linalg.lstsq(X[mask], y[mask], rcond=None)[0]
            pred[t] = np.where(mask, y, X @ beta)
        taus.append(np.mean(pred[1] - pred[0]))
    assert res.assignments == 252 and res.successes == 252
    assert res.bias == pytest.approx(math.fsum(taus) / 252 - pop.tau, abs=1e-12)


def test_logistic_failures_are_counted():
    pop = generate_population("binary_logistic", 12, 0.5, seed=1)
    res = exhaustive_bias(pop, ob("logit", "logistic"), 6)
    assert res.failures.get("Separation", 0) > 0 and res.successes > 0
    assert res.successes + sum(res.failures.values()) == 924
    assert math.isfinite(res.bias)


def test_all_failures_give_nan_bias():
    # one inverted pair: every split leaves one arm separable
    x = np.array([-3.0, -2.0, -1.0, 1.0, 2.0, 3.0, -0.5, 0.5])
    y = (x > 0).astype(float)
    y[-2:] = [1.0, 0.0]
    pop = SyntheticPopulation(np.column_stack([x, np.ones(8)]), y, y, has_intercept=True)
    res = exhaustive_bias(pop, ob("logit", "logistic"), 4)
    assert res.failures == {"Separation": 70} and math.isnan(res.bias)


@pytest.mark.parametrize("n,n1", [(8, 4), (9, 3), (10, 5)])
def test_sigma2_scaling_by_enumeration(n, n1, rng):
    # for constant fits, n * exact randomization variance = sigma2 * n / (n - 1)
    pop = random_population(rng, n)
    plan = SimulationPlan(pop, n1, 0, 0, (DIM,), mode="exhaustive")
    rep = run(plan)
    var_exact = rep["dim"].sd ** 2
    oracle = population_oracle(pop, CONST, CONST, n1)
    assert n * var_exact == pytest.approx(oracle.sigma2 * n / (n - 1), rel=1e-10)


# -- population oracle ------------------------------------------------------------

def test_oracle_zero_residual_poisson():
    x = np.linspace(0, 2, 20)
    X = np.column_stack([x, np.ones(20)])
    y1 = np.exp(0.3 + 0.9 * x)
    pop = SyntheticPopulation(X, y1, np.ones(20), has_intercept=True)
    o = population_oracle(pop, ModelSpec("poisson"), CONST)
    assert o.mse1 <= 1e-10


def test_oracle_identity_case(rng):
    pop0 = random_population(rng, 30)
    pop = SyntheticPopulation(pop0.covariates, pop0.y0, pop0.y0, has_intercept=True)
    for n1 in (15, 10):
        o = population_oracle(pop, OLS, OLS, n1)
        assert o.rho == pytest.approx(1.0)
        np.testing.assert_array_equal(o.eps1, o.eps0)
        assert o.sigma2 == pytest.approx(o.neyman_bound, rel=1e-12)


def test_oracle_constant_mse_is_population_variance(rng):
    pop = random_population(rng, 25)
    o = population_oracle(pop, CONST, CONST)
    assert o.mse1 == pytest.approx(np.var(pop.y1))
    assert o.mse0 == pytest.approx(np.var(pop.y0))


@settings(max_examples=40, deadline=None)
@given(st.integers(6, 60), st.floats(0.1, 0.9), st.integers(0, 2**32 - 1),
       st.sampled_from(["constant", "ols"]))
def test_sigma2_below_bound(n, p, seed, family):
    rng = np.random.default_rng(seed)
    pop = random_population(rng, n)
    n1 = min(n - 1, max(1, int(round(p * n))))
    o = population_oracle(pop, ModelSpec(family), ModelSpec(family), n1)
    assert o.sigma2 <= o.neyman_bound * (1 + 1e-12) + 1e-12


# -- populations -------------------------------------------------------------------

@pytest.mark.parametrize("kind", POPULATION_KINDS)
def test_generate_population_deterministic(kind):
    a = generate_population(kind, 50, 0.3, seed=4)
    b = generate_population(kind, 50, 0.3, seed=4)
    np.testing.assert_array_equal(a.y1, b.y1)
    np.testing.assert_array_equal(a.covariates, b.covariates)
    assert a.has_intercept and np.all(a.covariates[:, -1] == 1.0)


def test_population_examples():
    pop = generate_population("monotone_bounded", 100, 0.0, seed=1)
    np.testing.assert_array_equal(pop.y1, pop.y0)
    assert pop.tau == 0.0
    pop = generate_population("poisson_counts", 100, 0.5, seed=1)
    assert pop.tau == pytest.approx(np.mean(pop.y1) - np.mean(pop.y0), abs=1e-12)
    assert np.all(pop.y1 == np.round(pop.y1)) and np.all(pop.y1 >= 0)
    pop = generate_population("binary_logistic", 100, 0.5, seed=1)
    assert set(np.unique(pop.y1)) <= {0.0, 1.0}
    assert np.all(generate_population("lognormal_skewed", 100, 0.2, seed=1).y0 > 0)


# -- sampled runs --------------------------------------------------------------------

def _plan(R=200, seed=5, **kw):
    pop = generate_population("linear_gaussian", 60, 1.0, seed=2)
    est = (ob("ols", "ols"), DIM, EstimatorConfig("lin", "lin_interactions"))
    return SimulationPlan(pop, 30, R, seed, est, **kw)


def test_run_is_deterministic():
    a = run(_plan()).to_dict(timestamp=False)
    b = run(_plan()).to_dict(timestamp=False)
    assert a == b
    assert run(_plan(seed=6)).to_dict(timestamp=False) != a


def test_threads_do_not_change_report():
    a = run(_plan(R=64), threads=1)
    b = run(_plan(R=64), threads=3)
    assert a.to_dict(timestamp=False) == b.to_dict(timestamp=False)
    np.testing.assert_array_equal(a["ols"].replicates, b["ols"].replicates)


def test_replicate_depends_only_on_seed_and_index():
    short, long = run(_plan(R=20)), run(_plan(R=50))
    np.testing.assert_array_equal(short["ols"].replicates, long["ols"].replicates[:20])


def test_disjoint_seeds_agree_on_coverage():
    R = 2000
    a = run(_plan(R=R, seed=100))["ols"].coverage
    b = run(_plan(R=R, seed=200))["ols"].coverage
    assert abs(a - b) <= 3 * math.sqrt(0.05 * 0.95 / R)


def test_failures_do_not_abort():
    pop = generate_population("binary_logistic", 16, 2.0, seed=0)
    plan = SimulationPlan(pop, 8, 100, 1, (ob("logit", "logistic"), DIM))
    rep = run(plan)
    s = rep["logit"]
    assert s.replications == 100
    assert s.successes + sum(s.failures.values()) == 100
    assert rep["dim"].successes == 100


def test_report_fields():
    d = run(_plan(R=30)).to_dict()
    assert "generated_at" in d
    for summary in d["estimators"].values():
        assert {"coverage", "mean_width", "bias", "sd", "ks_distance", "skewness"} <= set(summary)


# -- plans -----------------------------------------------------------------------------

def test_plan_validation():
    with pytest.raises(PlanValidationError):
        _plan(R=0)
    with pytest.raises(PlanValidationError):
        _plan(alpha=1.5)
    pop = generate_population("linear_gaussian", 40, 0.0, seed=0)
    with pytest.raises(PlanValidationError):
        SimulationPlan(pop, 20, 10, 0, (DIM,), mode="exhaustive")
    with pytest.raises(PlanValidationError):
        SimulationPlan(pop, 20, 10, 0, (DIM, DIM))


def test_plan_from_dict_variants(tmp_path):
    base = {"n1": 3, "replications": 10, "seed": 1,
            "estimators": [{"kind": "difference_in_means"},
                           {"name": "o", "family1": "ols", "quantile": "t"}]}
    gen = plan_from_dict({**base, "population": {"generate": {"kind": "linear_gaussian", "n": 8}}})
    assert gen.population.n == 8 and gen.estimators[1].quantile_kind == "t_welch"
    inline = plan_from_dict({**base, "population": {"y1": [1, 2, 3, 4, 5, 6],
                                                    "y0": [0, 1, 2, 3, 4, 5],
                                                    "covariates": [[1], [2], [3], [4], [5], [6]]}})
    assert inline.population.tau == 1.0
    write_csv(tmp_path / "pop.csv", ["x", "a", "b"], [[i, i + 1, i] for i in range(6)])
    from_csv = plan_from_dict({**base, "population": {"csv": "pop.csv", "y1": "a", "y0": "b",
                                                      "covariates": ["x"]}},
                              base_dir=str(tmp_path))
    assert from_csv.population.n == 6
    with pytest.raises(PlanValidationError):
        plan_from_dict({**base, "replications": 0,
                        "population": {"generate": {"kind": "linear_gaussian", "n": 8}}})
    with pytest.raises(PlanValidationError):
        plan_from_dict({**base, "population": {"generate": {"kind": "nope", "n": 8}}})
    with pytest.raises(PlanValidationError):
        plan_from_dict({**base, "population": {}})

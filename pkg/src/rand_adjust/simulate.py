"""Finite-population Monte Carlo over the randomization distribution.

A fixed :class:`SyntheticPopulation` is re-randomized many times; every
configured estimator is run on each realized experiment and the replicates
are summarized (bias, SD, coverage, width, normality). Replication ``r``
draws its assignment from its own RNG stream keyed on ``(seed, r)``, so the
report does not depend on how replications are scheduled.
"""

from __future__ import annotations

import datetime as _dt
import math
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from math import comb
from typing import Any, Literal, Sequence

import numpy as np
from scipy import stats

from .dataset import SyntheticPopulation, realize
from .design import enumerate_assignments, enumeration_cap, rng_stream, sample_assignment
from .errors import PlanValidationError, RandAdjustError
from .estimator import (
    AdjustedEstimate,
    difference_in_means,
    lin_interactions,
    oaxaca_blinder,
)
from .models import FittedModel, ModelSpec, fit_arrays

EstimatorKind = Literal["oaxaca_blinder", "difference_in_means", "lin_interactions"]
ESTIMATOR_KINDS = ("oaxaca_blinder", "difference_in_means", "lin_interactions")


@dataclass(frozen=True)
class EstimatorConfig:
    """A named estimator to run in every replication."""

    name: str
    kind: EstimatorKind = "oaxaca_blinder"
    spec1: ModelSpec | None = None
    spec0: ModelSpec | None = None
    quantile_kind: str = "t_welch"
    hc_variant: str = "hc3"

    def __post_init__(self):
        if self.kind not in ESTIMATOR_KINDS:
            raise PlanValidationError(f"estimator {self.name!r}: unknown kind {self.kind!r}")
        if self.kind == "oaxaca_blinder" and (self.spec1 is None or self.spec0 is None):
            raise PlanValidationError(
                f"estimator {self.name!r}: oaxaca_blinder needs a model spec for each arm"
            )

    def estimate(self, ds, alpha: float) -> AdjustedEstimate:
        if self.kind == "oaxaca_blinder":
            return oaxaca_blinder(ds, self.spec1, self.spec0, alpha, self.quantile_kind)
        if self.kind == "difference_in_means":
            return difference_in_means(ds, alpha, self.quantile_kind)
        q = "t" if self.quantile_kind in ("t", "t_welch") else "normal"
        return lin_interactions(ds, alpha, self.hc_variant, q)

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"name": self.name, "kind": self.kind,
                               "quantile": self.quantile_kind}
        if self.kind == "oaxaca_blinder":
            out["family1"] = self.spec1.family
            out["family0"] = self.spec0.family
            out["log_covariates"] = self.spec1.log_covariates
        if self.kind == "lin_interactions":
            out["hc"] = self.hc_variant
        return out

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "EstimatorConfig":
        kind = d.get("kind", "oaxaca_blinder")
        quantile = {"t": "t_welch"}.get(d.get("quantile", "t_welch"), d.get("quantile", "t_welch"))
        name = d.get("name") or (
            f"{d.get('family1')}/{d.get('family0')}" if kind == "oaxaca_blinder" else kind
        )
        spec1 = spec0 = None
        if kind == "oaxaca_blinder":
            if "family1" not in d:
                raise PlanValidationError(f"estimator {name!r}: missing family1")
            log = bool(d.get("log_covariates", False))
            spec1 = ModelSpec(d["family1"], log_covariates=log)
            spec0 = ModelSpec(d.get("family0", d["family1"]), log_covariates=log)
        return cls(name, kind, spec1, spec0, quantile, d.get("hc", "hc3"))


def ob(name: str, family1: str, family0: str | None = None, *,
       log_covariates: bool = False, quantile_kind: str = "t_welch") -> EstimatorConfig:
    """Shorthand for an Oaxaca-Blinder estimator configuration."""
    return EstimatorConfig(
        name, "oaxaca_blinder",
        ModelSpec(family1, log_covariates=log_covariates),
        ModelSpec(family0 or family1, log_covariates=log_covariates),
        quantile_kind,
    )


@dataclass(frozen=True)
class SimulationPlan:
    population: SyntheticPopulation
    n1: int
    replications: int
    seed: int
    estimators: tuple[EstimatorConfig, ...]
    alpha: float = 0.05
    mode: Literal["sampled", "exhaustive"] = "sampled"
    enum_cap: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "estimators", tuple(self.estimators))
        n = self.population.n
        if not 1 <= self.n1 <= n - 1:
            raise PlanValidationError(f"n1 must lie in [1, {n - 1}], got {self.n1}")
        if not 0.0 < self.alpha < 1.0:
            raise PlanValidationError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not self.estimators:
            raise PlanValidationError("plan lists no estimators")
        names = [e.name for e in self.estimators]
        if len(set(names)) != len(names):
            raise PlanValidationError(f"estimator names must be unique: {names}")
        if self.mode == "sampled":
            if int(self.replications) < 1:
                raise PlanValidationError("replications must be >= 1 in sampled mode")
            if not 0 <= int(self.seed) < 2**64:
                raise PlanValidationError("seed must be a nonnegative 64-bit integer")
        elif self.mode == "exhaustive":
            total = comb(n, self.n1)
            cap = enumeration_cap(self.enum_cap)
            if total > cap:
                raise PlanValidationError(
                    f"exhaustive mode needs C({n}, {self.n1}) = {total} <= cap {cap}"
                )
            object.__setattr__(self, "replications", total)
        else:
            raise PlanValidationError(f"unknown mode {self.mode!r}")


@dataclass
class EstimatorSummary:
    name: str
    replications: int
    successes: int
    failures: dict[str, int]
    mean: float
    bias: float
    sd: float
    coverage: float
    mean_width: float
    skewness: float
    excess_kurtosis: float
    ks_distance: float
    replicates: np.ndarray = field(repr=False)
    widths: np.ndarray = field(repr=False)
    covered: np.ndarray = field(repr=False)

    def to_dict(self) -> dict[str, Any]:
        return {
            "replications": self.replications,
            "successes": self.successes,
            "failures": dict(sorted(self.failures.items())),
            "failure_count": self.replications - self.successes,
            "mean": self.mean,
            "bias": self.bias,
            "sd": self.sd,
            "coverage": self.coverage,
            "mean_width": self.mean_width,
            "skewness": self.skewness,
            "excess_kurtosis": self.excess_kurtosis,
            "ks_distance": self.ks_distance,
        }


@dataclass
class SimulationReport:
    tau: float
    n: int
    n1: int
    alpha: float
    mode: str
    replications: int
    seed: int | None
    estimators: dict[str, EstimatorSummary]

    def __getitem__(self, name: str) -> EstimatorSummary:
        return self.estimators[name]

    def to_dict(self, timestamp: bool = True) -> dict[str, Any]:
        out: dict[str, Any] = {
            "tau": self.tau,
            "n": self.n,
            "n1": self.n1,
            "alpha": self.alpha,
            "mode": self.mode,
            "replications": self.replications,
            "seed": self.seed,
            "estimators": {k: v.to_dict() for k, v in self.estimators.items()},
        }
        if timestamp:
            out["generated_at"] = _dt.datetime.now(_dt.timezone.utc).isoformat()
        return out


def _fsum_mean(x: np.ndarray) -> float:
    return math.fsum(x.tolist()) / len(x) if len(x) else math.nan


def _summarize(name: str, tau: float, est: np.ndarray, lo: np.ndarray, hi: np.ndarray,
               codes: Sequence[str | None], ddof: int) -> EstimatorSummary:
    ok = np.isfinite(est)
    vals = est[ok]
    k = len(vals)
    mean = _fsum_mean(vals)
    if k > ddof:
        sd = math.sqrt(math.fsum(((vals - mean) ** 2).tolist()) / (k - ddof))
    else:
        sd = math.nan
    covered = (lo[ok] <= tau) & (tau <= hi[ok])
    widths = hi[ok] - lo[ok]
    skew = kurt = ks = math.nan
    if k >= 3 and sd > 0:
        std = (vals - mean) / sd
        skew = float(stats.skew(std))
        kurt = float(stats.kurtosis(std))
        ks = float(stats.kstest(std, "norm").statistic)
    return EstimatorSummary(
        name=name, replications=len(est), successes=k,
        failures=dict(Counter(c for c in codes if c is not None)),
        mean=mean, bias=mean - tau if k else math.nan, sd=sd,
        coverage=_fsum_mean(covered.astype(float)),
        mean_width=_fsum_mean(widths),
        skewness=skew, excess_kurtosis=kurt, ks_distance=ks,
        replicates=est, widths=hi - lo, covered=(lo <= tau) & (tau <= hi),
    )


def _one_replication(pop, z, estimators, alpha):
    ds = realize(pop, z)
    out = []
    for cfg in estimators:
        try:
            e = cfg.estimate(ds, alpha)
            out.append((e.tau_hat, e.ci_lower, e.ci_upper, None))
        except RandAdjustError as err:
            out.append((math.nan, math.nan, math.nan, err.code))
    return out


def _run_chunk(args):
    plan, start, stop = args
    pop, n, n1 = plan.population, plan.population.n, plan.n1
    rows = []
    if plan.mode == "sampled":
        for r in range(start, stop):
            z = sample_assignment(n, n1, rng_stream(plan.seed, r)).z
            rows.append(_one_replication(pop, z, plan.estimators, plan.alpha))
    else:
        space = enumerate_assignments(n, n1, plan.enum_cap)
        if start == 0 and stop == len(space):
            zs = (a.z for a in space)
        else:
            zs = (space[r].z for r in range(start, stop))
        for z in zs:
            rows.append(_one_replication(pop, z, plan.estimators, plan.alpha))
    return rows


def run(plan: SimulationPlan, threads: int = 1) -> SimulationReport:
    """Execute ``plan``; identical output for any ``threads`` value."""
    R = plan.replications
    threads = max(1, int(threads))
    if threads == 1 or R < 2 * threads:
        rows = _run_chunk((plan, 0, R))
    else:
        bounds = np.linspace(0, R, min(R, 4 * threads) + 1).astype(int)
        chunks = [(plan, int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:])]
        with ProcessPoolExecutor(max_workers=threads) as pool:
            rows = [row for part in pool.map(_run_chunk, chunks) for row in part]

    tau = plan.population.tau
    ddof = 0 if plan.mode == "exhaustive" else 1
    summaries = {}
    for j, cfg in enumerate(plan.estimators):
        col = [row[j] for row in rows]
        est = np.array([c[0] for c in col])
        lo = np.array([c[1] for c in col])
        hi = np.array([c[2] for c in col])
        summaries[cfg.name] = _summarize(cfg.name, tau, est, lo, hi, [c[3] for c in col], ddof)
    return SimulationReport(
        tau=tau, n=plan.population.n, n1=plan.n1, alpha=plan.alpha, mode=plan.mode,
        replications=R, seed=plan.seed if plan.mode == "sampled" else None,
        estimators=summaries,
    )


@dataclass(frozen=True)
class ExhaustiveBias:
    bias: float
    mean: float
    assignments: int
    successes: int
    failures: dict[str, int]

    def to_dict(self) -> dict[str, Any]:
        return {
            "assignments": self.assignments,
            "bias": self.bias,
            "mean": self.mean,
            "successes": self.successes,
            "failures": dict(sorted(self.failures.items())),
        }


def exhaustive_bias(pop: SyntheticPopulation, config: EstimatorConfig, n1: int,
                    alpha: float = 0.05, cap: int | None = None) -> ExhaustiveBias:
    """Exact randomization mean of the estimator minus tau.

    Assignments whose fits fail are excluded from the mean and tallied by
    error code.
    """
    space = enumerate_assignments(pop.n, n1, cap)
    taus, codes = [], Counter()
    for a in space:
        ds = realize(pop, a.z)
        try:
            taus.append(config.estimate(ds, alpha).tau_hat)
        except RandAdjustError as err:
            codes[err.code] += 1
    mean = math.fsum(taus) / len(taus) if taus else math.nan
    return ExhaustiveBias(
        bias=mean - pop.tau if taus else math.nan, mean=mean,
        assignments=len(space), successes=len(taus), failures=dict(codes),
    )


# -- population-level quantities ----------------------------------------------

@dataclass(frozen=True)
class PopulationOracle:
    """Population fits and residual summaries, available only in simulation."""

    mu1: FittedModel = field(repr=False)
    mu0: FittedModel = field(repr=False)
    eps1: np.ndarray = field(repr=False)
    eps0: np.ndarray = field(repr=False)
    mse1: float
    mse0: float
    rho: float
    sigma2: float
    tau: float
    p: float

    @property
    def neyman_bound(self) -> float:
        """MSE(1)/p + MSE(0)/(1-p): the scaled variance bound the CI estimates."""
        return self.mse1 / self.p + self.mse0 / (1.0 - self.p)

    def standard_error(self, n: int) -> float:
        return math.sqrt(self.sigma2 / n)

    def to_dict(self) -> dict[str, Any]:
        return {"mse1": self.mse1, "mse0": self.mse0, "rho": self.rho,
                "sigma2": self.sigma2, "neyman_bound": self.neyman_bound,
                "tau": self.tau, "p": self.p}


def population_oracle(pop: SyntheticPopulation, spec1: ModelSpec, spec0: ModelSpec,
                      n1: int | None = None) -> PopulationOracle:
    """Fit each family on every unit and derive the asymptotic variance.

    ``sigma2`` is the limiting variance of sqrt(n)(tau_hat - tau):
    V1/p + V0/(1-p) - V10, with V the (1/n) variances of the population
    residuals eps1, eps0 and of eps1 - eps0. ``n1`` defaults to n // 2.
    """
    n = pop.n
    n1 = n // 2 if n1 is None else int(n1)
    if not 1 <= n1 <= n - 1:
        raise PlanValidationError(f"n1 must lie in [1, {n - 1}], got {n1}")
    p = n1 / n
    mu1 = fit_arrays(spec1, pop.covariates, pop.y1, pop.has_intercept)
    mu0 = fit_arrays(spec0, pop.covariates, pop.y0, pop.has_intercept)
    eps1 = pop.y1 - mu1.fitted
    eps0 = pop.y0 - mu0.fitted
    mse1 = float(np.mean(eps1 ** 2))
    mse0 = float(np.mean(eps0 ** 2))
    norm = math.sqrt(float(eps1 @ eps1) * float(eps0 @ eps0))
    rho = float(eps1 @ eps0) / norm if norm > 0 else math.nan
    diff = eps1 - eps0
    sigma2 = (float(np.var(eps1)) / p + float(np.var(eps0)) / (1.0 - p)
              - float(np.var(diff)))
    return PopulationOracle(mu1, mu0, eps1, eps0, mse1, mse0, rho, max(sigma2, 0.0),
                            pop.tau, p)


# -- synthetic populations ----------------------------------------------------

POPULATION_KINDS = ("poisson_counts", "lognormal_skewed", "monotone_bounded",
                    "linear_gaussian", "binary_logistic")


def _expit(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def generate_population(kind: str, n: int, effect: float = 0.0,
                        seed: int = 0) -> SyntheticPopulation:
    """Draw a synthetic finite population; all randomness is spent here.

    Both potential outcomes share the same noise draw (quantile coupling for
    the discrete kinds), so residuals of the two arms are strongly
    correlated. The covariate matrix always ends in an intercept column.

    * ``linear_gaussian``: x1 on a grid over [-1, 1], x2 ~ N(0, 1);
      y0 = 1 + 2 x1 - x2 + N(0, 1), y1 = y0 + effect + 0.5 x1.
    * ``poisson_counts``: x ~ U(0, 3); y_t ~ Poisson(exp(0.5 + x + t*effect)).
    * ``lognormal_skewed``: x = exp(U(-1, 2)); log y0 = 0.3 + 2 log x
      + 0.6 N(0, 1), y1 = y0 exp(effect).
    * ``monotone_bounded``: x ~ U(0, 1); y_t = clip(s(x) + t*effect + N(0, 0.2^2), 0, 1)
      with s a logistic curve rising from 0.1 to 0.9.
    * ``binary_logistic``: x ~ U(-2, 2); y_t = 1{U < expit(-0.3 + 1.2 x + t*effect)}.
    """
    if n < 4:
        raise PlanValidationError(f"population size must be at least 4, got {n}")
    rng = np.random.default_rng(seed)
    ones = np.ones(n)
    if kind == "linear_gaussian":
        x1 = np.linspace(-1.0, 1.0, n)
        x2 = rng.standard_normal(n)
        y0 = 1.0 + 2.0 * x1 - x2 + rng.standard_normal(n)
        y1 = y0 + effect + 0.5 * x1
        X = np.column_stack([x1, x2, ones])
    elif kind == "poisson_counts":
        x = rng.uniform(0.0, 3.0, n)
        u = rng.uniform(size=n)
        lam0 = np.exp(0.5 + x)
        y0 = stats.poisson.ppf(u, lam0)
        y1 = stats.poisson.ppf(u, lam0 * math.exp(effect))
        X = np.column_stack([x, ones])
    elif kind == "lognormal_skewed":
        x = np.exp(rng.uniform(-1.0, 2.0, n))
        y0 = np.exp(0.3 + 2.0 * np.log(x) + 0.6 * rng.standard_normal(n))
        y1 = y0 * math.exp(effect)
        X = np.column_stack([x, ones])
    elif kind == "monotone_bounded":
        x = rng.uniform(0.0, 1.0, n)
        signal = 0.1 + 0.8 * _expit(8.0 * (x - 0.5))
        noise = 0.2 * rng.standard_normal(n)
        y0 = np.clip(signal + noise, 0.0, 1.0)
        y1 = np.clip(signal + effect + noise, 0.0, 1.0)
        X = np.column_stack([x, ones])
    elif kind == "binary_logistic":
        x = rng.uniform(-2.0, 2.0, n)
        u = rng.uniform(size=n)
        y0 = (u < _expit(-0.3 + 1.2 * x)).astype(float)
        y1 = (u < _expit(-0.3 + effect + 1.2 * x)).astype(float)
        X = np.column_stack([x, ones])
    else:
        raise PlanValidationError(f"unknown population kind {kind!r}; "
                                  f"expected one of {', '.join(POPULATION_KINDS)}")
    return SyntheticPopulation(X, y1, y0, has_intercept=True)


# -- JSON plans -----------------------------------------------------------------

def _population_from_dict(d: dict[str, Any], base_dir: str | None) -> SyntheticPopulation:
    import os

    from .dataset import load_population_csv

    if "generate" in d:
        g = d["generate"]
        return generate_population(g["kind"], int(g["n"]), float(g.get("effect", 0.0)),
                                   int(g.get("seed", 0)))
    if "csv" in d:
        path = d["csv"]
        if base_dir and not os.path.isabs(path):
            path = os.path.join(base_dir, path)
        return load_population_csv(path, d["y1"], d["y0"], d.get("covariates", []),
                                   bool(d.get("add_intercept", True)))
    if "y1" in d and "y0" in d:
        y1 = np.asarray(d["y1"], dtype=float)
        X = np.asarray(d.get("covariates", np.empty((len(y1), 0))), dtype=float)
        X = X.reshape(len(y1), -1)
        add = bool(d.get("add_intercept", True))
        if add:
            X = np.column_stack([X, np.ones(len(y1))])
        return SyntheticPopulation(X, y1, d["y0"], has_intercept=add)
    raise PlanValidationError("population needs one of 'generate', 'csv', or inline y1/y0")


def plan_from_dict(d: dict[str, Any], base_dir: str | None = None) -> SimulationPlan:
    """Build a plan from its JSON form; relative CSV paths resolve against ``base_dir``."""
    try:
        pop = _population_from_dict(d["population"], base_dir)
        n1 = int(d["n1"]) if "n1" in d else int(round(float(d.get("p", 0.5)) * pop.n))
        estimators = [EstimatorConfig.from_dict(e) for e in d.get("estimators", [])]
        return SimulationPlan(
            population=pop, n1=n1,
            replications=int(d.get("replications", 1000)),
            seed=int(d.get("seed", 0)),
            estimators=tuple(estimators),
            alpha=float(d.get("alpha", 0.05)),
            mode=d.get("mode", "sampled"),
            enum_cap=d.get("enum_cap"),
        )
    except PlanValidationError:
        raise
    except RandAdjustError as err:
        raise PlanValidationError(f"invalid plan: {err.message}", cause=err.code) from err
    except (KeyError, TypeError, ValueError) as err:
        raise PlanValidationError(f"invalid plan: {type(err).__name__}: {err}") from err

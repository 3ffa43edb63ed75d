"""Prediction-unbiased regression families fitted on one treatment arm.

Every fitted model carries a certificate recording whether its mean
in-sample prediction matches the mean training outcome. The imputation
estimator in :mod:`rand_adjust.estimator` relies on that property.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Any, Literal

import numpy as np
from scipy import linalg, optimize

from .dataset import ArmView
from .errors import (
    DegenerateCalibration,
    DimensionMismatch,
    IllConditionedHessian,
    InvalidSpec,
    NonConvergence,
    OutcomeDomainError,
    RandAdjustError,
    RankDeficient,
    Separation,
    ValidationError,
)

FAMILIES = (
    "constant",
    "ols",
    "logistic",
    "poisson",
    "log_ols_debiased",
    "log_ols_calibrated",
    "isotonic",
)
Family = Literal[
    "constant", "ols", "logistic", "poisson",
    "log_ols_debiased", "log_ols_calibrated", "isotonic",
]

RANK_TOL = 1e-10
UNBIASED_TOL = 1e-8


class CovariateDomainError(ValidationError):
    code = "CovariateDomainError"


@dataclass(frozen=True)
class SolverConfig:
    max_iterations: int = 100
    gradient_tolerance: float = 1e-10
    min_hessian_eigenvalue_floor: float = 1e-8
    step_halving_max: int = 30
    divergence_threshold: float = 1e3

    def __post_init__(self):
        for name in ("max_iterations", "gradient_tolerance",
                     "min_hessian_eigenvalue_floor", "step_halving_max",
                     "divergence_threshold"):
            if not getattr(self, name) > 0:
                raise InvalidSpec(f"SolverConfig.{name} must be positive")


@dataclass(frozen=True)
class ModelSpec:
    family: Family
    solver: SolverConfig = field(default_factory=SolverConfig)
    log_covariates: bool = False

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise InvalidSpec(f"unknown model family {self.family!r}; "
                              f"expected one of {', '.join(FAMILIES)}")


@dataclass(frozen=True)
class FittedModel:
    """A fitted regressor plus the bookkeeping needed to predict and audit it.

    ``params`` holds ``theta`` for parametric families, ``knots``/``values``
    for isotonic, ``mean`` for constant, and additionally ``offset`` (debiased)
    or ``beta0``/``beta1`` (calibrated) for the log-OLS variants.
    """

    family: str
    params: dict[str, Any]
    fitted: np.ndarray = field(repr=False)
    training_bias: float
    prediction_unbiased: bool
    n_columns: int
    has_intercept: bool = False
    log_covariates: bool = False
    arm: int | None = None
    indices: np.ndarray | None = field(default=None, repr=False)

    def to_dict(self) -> dict[str, Any]:
        def plain(v):
            return v.tolist() if isinstance(v, np.ndarray) else float(v)

        return {
            "family": self.family,
            "params": {k: plain(v) for k, v in self.params.items()},
            "log_covariates": self.log_covariates,
            "prediction_unbiased": self.prediction_unbiased,
            "training_bias": self.training_bias,
        }


def certify(fitted: np.ndarray, y: np.ndarray) -> tuple[float, bool]:
    """Mean training residual and whether it passes the unbiasedness check."""
    bias = float(np.mean(fitted - y))
    return bias, abs(bias) <= UNBIASED_TOL * (1.0 + abs(float(np.mean(y))))


# -- least squares -----------------------------------------------------------

def _pivoted_qr(X: np.ndarray):
    n, p = X.shape
    if p == 0:
        raise InvalidSpec("design matrix has no columns")
    Q, R, piv = linalg.qr(X, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    scale = diag[0] if diag.size else 0.0
    rank = int(np.sum(diag > RANK_TOL * scale)) if scale > 0 else 0
    if rank < p:
        col = int(piv[rank])
        raise RankDeficient(
            f"design matrix is rank deficient (rank {rank} < {p}); "
            f"column {col} is linearly dependent on the others",
            column=col, rank=rank,
        )
    return Q, R, piv


def fit_ols(X, y) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    Q, R, piv = _pivoted_qr(X)
    beta = np.empty(X.shape[1])
    beta[piv] = linalg.solve_triangular(R, Q.T @ y)
    return beta


def fit_log_ols(X, y) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if not (y > 0).all():
        raise OutcomeDomainError("log-OLS requires strictly positive outcomes")
    return fit_ols(X, np.log(y))


def debias(base, y) -> float:
    base = np.asarray(base, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(base) != len(y) or len(y) == 0:
        raise ValidationError("debias needs equal-length, nonempty inputs")
    return float(np.mean(base - y))


def calibrate_ols2(base, y) -> tuple[float, float]:
    """Intercept and slope of the outcome regressed on base predictions."""
    m = np.asarray(base, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(m) != len(y) or len(y) == 0:
        raise ValidationError("calibrate_ols2 needs equal-length, nonempty inputs")
    mc = m - m.mean()
    ss = float(mc @ mc)
    if ss <= (1e-12 * max(1.0, float(np.max(np.abs(m))))) ** 2 * len(m):
        raise DegenerateCalibration(
            "base predictions are constant; the second-stage regression is singular"
        )
    b1 = float(mc @ (y - y.mean())) / ss
    b0 = float(y.mean() - b1 * m.mean())
    return b0, b1


# -- canonical-link GLMs -------------------------------------------------------

def _glm_pieces(family: str):
    if family == "logistic":
        def loss(eta, y):
            return float(np.mean(np.logaddexp(0.0, eta) - y * eta))

        def mean(eta):
            return 0.5 * (1.0 + np.tanh(0.5 * eta))

        def var(mu):
            return mu * (1.0 - mu)
    elif family == "poisson":
        def loss(eta, y):
            with np.errstate(over="ignore"):
                return float(np.mean(np.exp(eta) - y * eta))

        def mean(eta):
            with np.errstate(over="ignore"):
                return np.exp(eta)

        def var(mu):
            return mu
    else:
        raise InvalidSpec(f"fit_glm supports logistic and poisson, not {family!r}")
    return loss, mean, var


def is_separated(X, y) -> bool:
    """Whether the 0/1 outcomes admit a (quasi-)separating hyperplane.

    Solves max sum_i s_i x_i'b subject to s_i x_i'b >= 0, |b| <= 1 with
    s_i = 2y_i - 1; a positive optimum certifies that the logistic MLE does
    not exist.
    """
    X = np.asarray(X, dtype=float)
    s = 2.0 * np.asarray(y, dtype=float) - 1.0
    A = X * s[:, None]
    res = optimize.linprog(
        -A.sum(axis=0), A_ub=-A, b_ub=np.zeros(len(A)),
        bounds=[(-1.0, 1.0)] * X.shape[1], method="highs",
    )
    if res.status != 0:
        return False
    return -res.fun > 1e-7 * max(1.0, float(np.abs(A).sum()))


def _poisson_start(X, y):
    # one IRLS step from mu = y + 0.1
    mu = y + 0.1
    z = np.log(mu) + (y - mu) / mu
    sw = np.sqrt(mu)
    return np.linalg.lstsq(X * sw[:, None], z * sw, rcond=None)[0]


def _newton(X, y, loss, mean, var, theta, cfg: SolverConfig, family: str):
    n = len(y)
    f = loss(X @ theta, y)
    for _ in range(cfg.max_iterations):
        eta = X @ theta
        mu = mean(eta)
        grad = X.T @ (mu - y) / n
        if np.max(np.abs(grad)) <= cfg.gradient_tolerance:
            return theta, True
        if (family == "logistic"
                and np.linalg.norm(theta) > cfg.divergence_threshold
                and is_separated(X, y)):
            raise Separation(f"logistic coefficients diverge (|theta| = "
                             f"{np.linalg.norm(theta):.3g}); outcomes are separable")
        H = (X * var(mu)[:, None]).T @ X / n
        eig_min = float(np.linalg.eigvalsh(H)[0])
        if not eig_min >= cfg.min_hessian_eigenvalue_floor:
            raise IllConditionedHessian(
                f"smallest Hessian eigenvalue {eig_min:.3g} is below the floor "
                f"{cfg.min_hessian_eigenvalue_floor:g}", eigenvalue=eig_min,
            )
        step = np.linalg.solve(H, grad)
        slack = 8 * np.finfo(float).eps * (1.0 + abs(f))
        t = 1.0
        for _ in range(cfg.step_halving_max + 1):
            cand = theta - t * step
            f_cand = loss(X @ cand, y)
            if f_cand <= f + slack:
                break
            t *= 0.5
        else:
            raise NonConvergence("step halving failed to decrease the objective")
        theta, f = cand, f_cand
    return theta, False


def fit_glm(X, y, family: Literal["logistic", "poisson"],
            cfg: SolverConfig | None = None) -> np.ndarray:
    """Canonical-link GLM by Newton's method with step halving.

    Stops once the gradient of the mean negative log-likelihood has sup-norm
    at most ``cfg.gradient_tolerance``, then takes one polishing step.
    """
    cfg = cfg or SolverConfig()
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    _check_outcomes(family, y)
    _pivoted_qr(X)
    loss, mean, var = _glm_pieces(family)
    theta = np.zeros(X.shape[1]) if family == "logistic" else _poisson_start(X, y)
    try:
        theta, converged = _newton(X, y, loss, mean, var, theta, cfg, family)
    except (IllConditionedHessian, NonConvergence) as err:
        if family == "logistic" and is_separated(X, y):
            raise Separation("outcomes are (quasi-)separated by a hyperplane; "
                             "the logistic MLE does not exist") from err
        raise
    if not converged:
        if family == "logistic" and is_separated(X, y):
            raise Separation("outcomes are (quasi-)separated by a hyperplane; "
                             "the logistic MLE does not exist")
        raise NonConvergence(f"no convergence within {cfg.max_iterations} iterations")

    # polishing step: Newton converges quadratically, so this lands at round-off
    mu = mean(X @ theta)
    grad = X.T @ (mu - y) / len(y)
    H = (X * var(mu)[:, None]).T @ X / len(y)
    cand = theta - np.linalg.solve(H, grad)
    cand_grad = X.T @ (mean(X @ cand) - y) / len(y)
    if np.max(np.abs(cand_grad)) <= np.max(np.abs(grad)):
        theta = cand

    if family == "logistic":
        p = mean(X @ theta)
        extreme = np.minimum(p, 1.0 - p)
        if (extreme <= 1e-10).all() or ((extreme <= 1e-6).any() and is_separated(X, y)):
            raise Separation("fitted probabilities collapse to 0/1; "
                             "outcomes are separable")
    return theta


# -- isotonic -------------------------------------------------------------------

def pava(y, w=None) -> np.ndarray:
    """Weighted least-squares projection of ``y`` onto nondecreasing sequences."""
    y = np.asarray(y, dtype=float)
    w = np.ones_like(y) if w is None else np.asarray(w, dtype=float)
    vals: list[float] = []
    wts: list[float] = []
    lens: list[int] = []
    for yi, wi in zip(y.tolist(), w.tolist()):
        v, ww, c = yi, wi, 1
        while vals and vals[-1] > v:
            pv, pw = vals.pop(), wts.pop()
            c += lens.pop()
            v = (pv * pw + v * ww) / (pw + ww)
            ww += pw
        vals.append(v)
        wts.append(ww)
        lens.append(c)
    return np.repeat(vals, lens)


def fit_isotonic(x, y) -> FittedModel:
    """Monotone (nondecreasing) least-squares fit of ``y`` on scalar ``x``.

    Tied covariate values are pooled first, weighted by tie count. The
    returned model interpolates linearly between knots and is flat beyond
    the training range.
    """
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if len(x) != len(y) or len(x) == 0:
        raise ValidationError("isotonic fit needs equal-length, nonempty x and y")
    if not (np.isfinite(x).all() and np.isfinite(y).all()):
        raise ValidationError("isotonic fit needs finite inputs")
    knots, inverse, counts = np.unique(x, return_inverse=True, return_counts=True)
    pooled = np.bincount(inverse, weights=y) / counts
    values = pava(pooled, counts)
    fitted = values[inverse]
    bias, ok = certify(fitted, y)
    return FittedModel(
        family="isotonic",
        params={"knots": knots, "values": values},
        fitted=fitted, training_bias=bias, prediction_unbiased=ok,
        n_columns=1,
    )


# -- dispatch -----------------------------------------------------------------

def _check_outcomes(family: str, y: np.ndarray) -> None:
    if family == "logistic" and not np.isin(y, (0.0, 1.0)).all():
        raise OutcomeDomainError("logistic regression requires outcomes in {0, 1}")
    if family == "poisson" and not (y >= 0).all():
        raise OutcomeDomainError("Poisson regression requires nonnegative outcomes")
    if family in ("log_ols_debiased", "log_ols_calibrated") and not (y > 0).all():
        raise OutcomeDomainError(f"{family} requires strictly positive outcomes")


def design_matrix(X, has_intercept: bool, log_covariates: bool) -> np.ndarray:
    """Apply the elementwise log to the non-intercept columns when requested."""
    X = np.asarray(X, dtype=float)
    if not log_covariates:
        return X
    body = X[:, :-1] if has_intercept else X
    if not (body > 0).all():
        raise CovariateDomainError("log-transformed covariates must be strictly positive")
    logged = np.log(body)
    return np.column_stack([logged, X[:, -1]]) if has_intercept else logged


def _isotonic_column(X: np.ndarray, has_intercept: bool) -> np.ndarray:
    body = X[:, :-1] if has_intercept else X
    if body.shape[1] != 1:
        raise InvalidSpec(
            f"isotonic regression needs exactly one covariate besides the "
            f"intercept, got {body.shape[1]}"
        )
    return body[:, 0]


def fit_arrays(spec: ModelSpec, X, y, has_intercept: bool = False) -> FittedModel:
    """Fit ``spec`` on raw covariate rows ``X`` and outcomes ``y``."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(y) == 0:
        raise ValidationError("cannot fit a model on zero rows")
    fam = spec.family
    _check_outcomes(fam, y)
    Xd = design_matrix(X, has_intercept, spec.log_covariates)
    common = dict(n_columns=X.shape[1], has_intercept=has_intercept,
                  log_covariates=spec.log_covariates)

    if fam == "isotonic":
        model = fit_isotonic(_isotonic_column(Xd, has_intercept), y)
        return replace(model, **common)

    if fam == "constant":
        params: dict[str, Any] = {"mean": float(np.mean(y))}
    elif fam == "ols":
        params = {"theta": fit_ols(Xd, y)}
    elif fam in ("logistic", "poisson"):
        params = {"theta": fit_glm(Xd, y, fam, spec.solver)}
    else:
        theta = fit_log_ols(Xd, y)
        base = np.exp(Xd @ theta)
        if fam == "log_ols_debiased":
            params = {"theta": theta, "offset": debias(base, y)}
        else:
            b0, b1 = calibrate_ols2(base, y)
            params = {"theta": theta, "beta0": b0, "beta1": b1}
    fitted = _evaluate(fam, params, Xd, len(y))
    bias, ok = certify(fitted, y)
    return FittedModel(fam, params, fitted, bias, ok, **common)


def fit(spec: ModelSpec, arm: ArmView) -> FittedModel:
    """Fit ``spec`` on the rows of one treatment arm."""
    try:
        model = fit_arrays(spec, arm.covariates, arm.outcomes, arm.dataset.has_intercept)
    except RandAdjustError as err:
        err.details.setdefault("arm", arm.t)
        raise
    return replace(model, arm=arm.t, indices=arm.indices)


def _evaluate(family: str, params: dict[str, Any], Xd: np.ndarray, n: int) -> np.ndarray:
    if family == "constant":
        return np.full(n, params["mean"])
    if family == "isotonic":
        return np.interp(Xd, params["knots"], params["values"])
    eta = Xd @ params["theta"]
    if family == "ols":
        return eta
    if family == "logistic":
        return 0.5 * (1.0 + np.tanh(0.5 * eta))
    with np.errstate(over="ignore"):
        base = np.exp(eta)
    if family == "poisson":
        return base
    if family == "log_ols_debiased":
        return base - params["offset"]
    return params["beta0"] + params["beta1"] * base


def predict(model: FittedModel, covariates) -> np.ndarray:
    X = np.asarray(covariates, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1) if model.n_columns == 1 else X.reshape(1, -1)
    if X.shape[1] != model.n_columns:
        raise DimensionMismatch(
            f"model was trained on {model.n_columns} covariate column(s), "
            f"got {X.shape[1]}"
        )
    Xd = design_matrix(X, model.has_intercept, model.log_covariates)
    if model.family == "isotonic":
        Xd = _isotonic_column(Xd, model.has_intercept)
    return _evaluate(model.family, model.params, Xd, X.shape[0])

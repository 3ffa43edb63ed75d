"""Imputation (generalized Oaxaca-Blinder) estimates of the sample ATE.

Each arm gets its own prediction-unbiased model; unobserved potential
outcomes are filled in with the opposite arm's predictions and the imputed
differences are averaged. Intervals use the conservative Neyman-type
variance built from in-sample residual variances.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Any, Literal

import numpy as np
from scipy import special

from .dataset import Dataset, arm
from .errors import (
    ArmMismatch,
    InvalidAlpha,
    InvalidSpec,
    NotPredictionUnbiased,
    TooFewUnits,
)
from .models import FittedModel, ModelSpec, fit, fit_ols, predict

QuantileKind = Literal["normal", "t_welch"]
NEAR_DEGENERATE_R2 = 0.99
NEAR_SEPARATION_EPS = 1e-6


@dataclass(frozen=True)
class ImputedOutcomes:
    yhat1: np.ndarray
    yhat0: np.ndarray


@dataclass(frozen=True)
class AdjustedEstimate:
    tau_hat: float
    mse1: float
    mse0: float
    ci_lower: float
    ci_upper: float
    alpha: float
    quantile_kind: str
    quantile: float
    degrees_of_freedom: float | None
    std_error: float
    r_squared_1: float
    r_squared_0: float
    n1: int
    n0: int
    method: str = "oaxaca_blinder"
    warnings: tuple[str, ...] = ()
    model1: FittedModel | None = field(default=None, repr=False)
    model0: FittedModel | None = field(default=None, repr=False)
    extra: dict[str, Any] = field(default_factory=dict, repr=False)

    @property
    def ci(self) -> tuple[float, float]:
        return self.ci_lower, self.ci_upper

    @property
    def width(self) -> float:
        return self.ci_upper - self.ci_lower

    def covers(self, tau: float) -> bool:
        return self.ci_lower <= tau <= self.ci_upper

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "method": self.method,
            "tau_hat": self.tau_hat,
            "ci": [self.ci_lower, self.ci_upper],
            "alpha": self.alpha,
            "std_error": self.std_error,
            "quantile": {
                "kind": self.quantile_kind,
                "value": self.quantile,
                "df": self.degrees_of_freedom,
            },
            "mse": {"t1": self.mse1, "t0": self.mse0},
            "r_squared": {"t1": self.r_squared_1, "t0": self.r_squared_0},
            "n": {"t1": self.n1, "t0": self.n0},
            "warnings": list(self.warnings),
        }
        if self.model1 is not None:
            out["model_1"] = self.model1.to_dict()
        if self.model0 is not None:
            out["model_0"] = self.model0.to_dict()
        out.update(self.extra)
        return out


def _check_alpha(alpha: float) -> None:
    if not 0.0 < alpha < 1.0:
        raise InvalidAlpha(f"alpha must lie in (0, 1), got {alpha!r}")


def welch_df(mse1: float, mse0: float, n1: int, n0: int) -> float:
    v1, v0 = mse1 / n1, mse0 / n0
    denom = v1 * v1 / (n1 - 1) + v0 * v0 / (n0 - 1)
    if denom == 0.0:
        # both variances zero: the interval has zero width anyway
        return float(n1 + n0 - 2)
    return (v1 + v0) ** 2 / denom


def neyman_ci(tau: float, mse1: float, mse0: float, n1: int, n0: int,
              alpha: float = 0.05, quantile_kind: QuantileKind = "t_welch"):
    """Interval tau +/- q * sqrt(mse1/n1 + mse0/n0).

    Returns ``(lower, upper, df)``; ``df`` is None for the normal quantile.
    """
    _check_alpha(alpha)
    if mse1 < 0 or mse0 < 0:
        raise InvalidSpec("MSE estimates must be nonnegative")
    if n1 < 2 or n0 < 2:
        raise TooFewUnits(f"need at least two units per arm, got n1={n1}, n0={n0}")
    q, df = _quantile(alpha, quantile_kind, mse1, mse0, n1, n0)
    half = q * math.sqrt(mse1 / n1 + mse0 / n0)
    return tau - half, tau + half, df


def _quantile(alpha, kind, mse1, mse0, n1, n0) -> tuple[float, float | None]:
    if kind == "normal":
        return float(special.ndtri(1.0 - alpha / 2)), None
    if kind == "t_welch":
        df = welch_df(mse1, mse0, n1, n0)
        return float(special.stdtrit(df, 1.0 - alpha / 2)), df
    raise InvalidSpec(f"unknown quantile kind {kind!r}")


def impute(model: FittedModel, ds: Dataset, t: int) -> np.ndarray:
    """Observed outcome where Z == t, the model's prediction elsewhere."""
    if model.arm is not None and model.arm != t:
        raise ArmMismatch(f"model was trained on arm {model.arm}, asked to impute arm {t}")
    observed = ds.treatment == t
    if model.indices is not None and len(model.indices) != int(observed.sum()):
        raise ArmMismatch(f"model training rows do not match arm {t} of this dataset")
    return np.where(observed, ds.outcomes, predict(model, ds.covariates))


def impute_both(model1: FittedModel, model0: FittedModel, ds: Dataset) -> ImputedOutcomes:
    return ImputedOutcomes(impute(model1, ds, 1), impute(model0, ds, 0))


def tau_projective(model1: FittedModel, model0: FittedModel, ds: Dataset) -> float:
    """Mean difference of the two models' predictions over all units.

    Agrees with the imputation form only for prediction-unbiased models.
    """
    for t, m in ((1, model1), (0, model0)):
        if not m.prediction_unbiased:
            raise NotPredictionUnbiased(
                f"arm {t} model ({m.family}) is not prediction unbiased "
                f"(training bias {m.training_bias:.3g})", arm=t,
            )
    return float(np.mean(predict(model1, ds.covariates) - predict(model0, ds.covariates)))


def _arm_fit_stats(model: FittedModel, y: np.ndarray) -> tuple[float, float]:
    """(MSE with n_t - 1 divisor, in-sample R^2 clipped to [0, 1])."""
    resid = y - model.fitted
    sse = float(resid @ resid)
    sst = float(((y - y.mean()) ** 2).sum())
    mse = sse / (len(y) - 1)
    if sst == 0.0:
        r2 = 1.0
    else:
        r2 = min(1.0, max(0.0, 1.0 - sse / sst))
    return mse, r2


def oaxaca_blinder(ds: Dataset, spec1: ModelSpec, spec0: ModelSpec,
                   alpha: float = 0.05,
                   quantile_kind: QuantileKind = "t_welch") -> AdjustedEstimate:
    """Generalized Oaxaca-Blinder estimate with its Neyman-type interval."""
    _check_alpha(alpha)
    n1, n0 = ds.n1, ds.n0
    if n1 < 2 or n0 < 2:
        raise TooFewUnits(f"need at least two units per arm, got n1={n1}, n0={n0}")
    arm1, arm0 = arm(ds, 1), arm(ds, 0)
    model1 = fit(spec1, arm1)
    model0 = fit(spec0, arm0)
    yhat1 = impute(model1, ds, 1)
    yhat0 = impute(model0, ds, 0)
    tau = float(np.mean(yhat1 - yhat0))

    mse1, r2_1 = _arm_fit_stats(model1, arm1.outcomes)
    mse0, r2_0 = _arm_fit_stats(model0, arm0.outcomes)
    q, df = _quantile(alpha, quantile_kind, mse1, mse0, n1, n0)
    se = math.sqrt(mse1 / n1 + mse0 / n0)

    warnings = []
    if r2_1 > NEAR_DEGENERATE_R2 and r2_0 > NEAR_DEGENERATE_R2:
        warnings.append("NEAR_DEGENERATE")
    for m in (model1, model0):
        if m.family == "logistic":
            p = m.fitted
            if (np.minimum(p, 1.0 - p) < NEAR_SEPARATION_EPS).any():
                warnings.append("NEAR_SEPARATION")
                break
    if not (model1.prediction_unbiased and model0.prediction_unbiased):
        warnings.append("NOT_PREDICTION_UNBIASED")

    return AdjustedEstimate(
        tau_hat=tau, mse1=mse1, mse0=mse0,
        ci_lower=tau - q * se, ci_upper=tau + q * se,
        alpha=alpha, quantile_kind=quantile_kind, quantile=q,
        degrees_of_freedom=df, std_error=se,
        r_squared_1=r2_1, r_squared_0=r2_0, n1=n1, n0=n0,
        warnings=tuple(warnings), model1=model1, model0=model0,
    )


_CONSTANT = ModelSpec("constant")


def difference_in_means(ds: Dataset, alpha: float = 0.05,
                        quantile_kind: QuantileKind = "t_welch") -> AdjustedEstimate:
    est = oaxaca_blinder(ds, _CONSTANT, _CONSTANT, alpha, quantile_kind)
    return _relabel(est, "difference_in_means")


def _relabel(est: AdjustedEstimate, method: str, **extra) -> AdjustedEstimate:
    return replace(est, method=method, extra={**est.extra, **extra})


# -- Lin's interacted regression with sandwich standard errors -------------------

HC_VARIANTS = ("hc0", "hc2", "hc3")


def leverage(X: np.ndarray) -> np.ndarray:
    Q, _ = np.linalg.qr(X)
    return np.einsum("ij,ij->i", Q, Q)


def sandwich_covariance(X, resid, variant: str = "hc3") -> np.ndarray:
    """(X'X)^-1 X' diag(w_i e_i^2) X (X'X)^-1 with HC0/HC2/HC3 weights."""
    X = np.asarray(X, dtype=float)
    e = np.asarray(resid, dtype=float)
    if variant not in HC_VARIANTS:
        raise InvalidSpec(f"unknown sandwich variant {variant!r}")
    if variant == "hc0":
        w = np.ones_like(e)
    else:
        h = leverage(X)
        with np.errstate(divide="ignore"):
            w = 1.0 / (1.0 - h) if variant == "hc2" else 1.0 / (1.0 - h) ** 2
    bread = np.linalg.inv(X.T @ X)
    meat = (X * (w * e * e)[:, None]).T @ X
    return bread @ meat @ bread


def lin_design(ds: Dataset) -> np.ndarray:
    """[1, Z, centered covariates, Z * centered covariates]."""
    body = ds.covariates[:, :-1] if ds.has_intercept else ds.covariates
    xc = body - body.mean(axis=0)
    z = ds.treatment.astype(float)
    return np.column_stack([np.ones(ds.n), z, xc, z[:, None] * xc])


def lin_interactions(ds: Dataset, alpha: float = 0.05, hc_variant: str = "hc3",
                     quantile_kind: Literal["normal", "t"] = "normal") -> AdjustedEstimate:
    """Coefficient on treatment in the fully interacted, centered OLS fit.

    ``quantile_kind="t"`` uses a t quantile with n - (number of coefficients)
    degrees of freedom.
    """
    _check_alpha(alpha)
    if hc_variant not in HC_VARIANTS:
        raise InvalidSpec(f"unknown sandwich variant {hc_variant!r}")
    X = lin_design(ds)
    k = (X.shape[1] - 2) // 2
    if min(ds.n1, ds.n0) < k + 3:
        raise TooFewUnits(
            f"each arm needs at least {k + 3} units for {k} covariates, "
            f"got n1={ds.n1}, n0={ds.n0}"
        )
    beta = fit_ols(X, ds.outcomes)
    resid = ds.outcomes - X @ beta
    cov = sandwich_covariance(X, resid, hc_variant)
    se = math.sqrt(cov[1, 1])
    tau = float(beta[1])
    if quantile_kind == "normal":
        q, df = float(special.ndtri(1.0 - alpha / 2)), None
    elif quantile_kind == "t":
        df = float(ds.n - X.shape[1])
        q = float(special.stdtrit(df, 1.0 - alpha / 2))
    else:
        raise InvalidSpec(f"unknown quantile kind {quantile_kind!r}")

    z = ds.treatment == 1
    stats_t = {}
    for t, mask in ((1, z), (0, ~z)):
        e, y = resid[mask], ds.outcomes[mask]
        sse, sst = float(e @ e), float(((y - y.mean()) ** 2).sum())
        r2 = 1.0 if sst == 0.0 else min(1.0, max(0.0, 1.0 - sse / sst))
        stats_t[t] = (sse / (mask.sum() - 1), r2)
    warnings = ()
    if not math.isfinite(se):
        warnings = ("LEVERAGE_ONE",)
    return AdjustedEstimate(
        tau_hat=tau, mse1=stats_t[1][0], mse0=stats_t[0][0],
        ci_lower=tau - q * se, ci_upper=tau + q * se,
        alpha=alpha, quantile_kind=quantile_kind, quantile=q,
        degrees_of_freedom=df, std_error=se,
        r_squared_1=stats_t[1][1], r_squared_0=stats_t[0][1],
        n1=ds.n1, n0=ds.n0, method="lin_interactions", warnings=warnings,
        extra={"hc": hc_variant, "coefficients": beta.tolist()},
    )

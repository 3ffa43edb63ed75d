"""Observed experiments, synthetic finite populations, and CSV ingestion."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from os import PathLike
from typing import Sequence

import numpy as np

from .errors import (
    DegenerateArm,
    LengthMismatch,
    MissingColumn,
    NonBinaryTreatment,
    NonNumericCell,
    ValidationError,
)


def _frozen(a, dtype=float, ndim=1) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    if ndim == 2 and arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != ndim:
        raise ValidationError(f"expected a {ndim}-d array, got shape {arr.shape}")
    arr.flags.writeable = False
    return arr


def _check_binary(z: np.ndarray) -> np.ndarray:
    bad = (z != 0) & (z != 1)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise NonBinaryTreatment(
            f"treatment entry {i} is {z[i]!r}, expected 0 or 1", row=i
        )
    return z.astype(np.int8)


def _check_arms(z: np.ndarray) -> None:
    n1 = int(z.sum())
    if n1 == 0:
        raise DegenerateArm("treatment arm is empty", arm=1)
    if n1 == len(z):
        raise DegenerateArm("control arm is empty", arm=0)


@dataclass(frozen=True)
class Dataset:
    """An observed completely randomized experiment.

    ``covariates`` is n x d. When ``has_intercept`` is set the last column is
    the all-ones intercept column.
    """

    covariates: np.ndarray
    outcomes: np.ndarray
    treatment: np.ndarray
    has_intercept: bool = False
    covariate_names: tuple[str, ...] | None = None

    def __post_init__(self):
        X = _frozen(self.covariates, ndim=2)
        y = _frozen(self.outcomes)
        z = np.asarray(self.treatment)
        if X.shape[0] != len(y) or len(z) != len(y):
            raise LengthMismatch(
                f"row counts differ: covariates {X.shape[0]}, outcomes {len(y)}, "
                f"treatment {len(z)}"
            )
        if not np.isfinite(X).all():
            i, j = np.argwhere(~np.isfinite(X))[0]
            raise NonNumericCell(f"non-finite covariate at row {i}, column {j}",
                                 row=int(i), column=int(j))
        if not np.isfinite(y).all():
            i = int(np.flatnonzero(~np.isfinite(y))[0])
            raise NonNumericCell(f"non-finite outcome at row {i}", row=i)
        z = _check_binary(z)
        _check_arms(z)
        z.flags.writeable = False
        object.__setattr__(self, "covariates", X)
        object.__setattr__(self, "outcomes", y)
        object.__setattr__(self, "treatment", z)
        if self.covariate_names is not None:
            object.__setattr__(self, "covariate_names", tuple(self.covariate_names))

    @property
    def n(self) -> int:
        return len(self.outcomes)

    @property
    def n1(self) -> int:
        return int(self.treatment.sum())

    @property
    def n0(self) -> int:
        return self.n - self.n1

    @property
    def d(self) -> int:
        return self.covariates.shape[1]

    @property
    def p(self) -> float:
        return self.n1 / self.n


@dataclass(frozen=True)
class SyntheticPopulation:
    """A finite population with both potential outcomes known."""

    covariates: np.ndarray
    y1: np.ndarray
    y0: np.ndarray
    has_intercept: bool = False

    def __post_init__(self):
        X = _frozen(self.covariates, ndim=2)
        y1 = _frozen(self.y1)
        y0 = _frozen(self.y0)
        if not (X.shape[0] == len(y1) == len(y0)):
            raise LengthMismatch(
                f"row counts differ: covariates {X.shape[0]}, y1 {len(y1)}, y0 {len(y0)}"
            )
        for name, arr in (("covariates", X), ("y1", y1), ("y0", y0)):
            if not np.isfinite(arr).all():
                raise NonNumericCell(f"non-finite value in {name}")
        object.__setattr__(self, "covariates", X)
        object.__setattr__(self, "y1", y1)
        object.__setattr__(self, "y0", y0)

    @property
    def n(self) -> int:
        return len(self.y1)

    @property
    def tau(self) -> float:
        return math.fsum(self.y1) / self.n - math.fsum(self.y0) / self.n


@dataclass(frozen=True)
class ArmView:
    dataset: Dataset
    t: int
    indices: np.ndarray = field(repr=False)

    @property
    def covariates(self) -> np.ndarray:
        return self.dataset.covariates[self.indices]

    @property
    def outcomes(self) -> np.ndarray:
        return self.dataset.outcomes[self.indices]

    def __len__(self) -> int:
        return len(self.indices)


def arm(ds: Dataset, t: int) -> ArmView:
    """Rows of ``ds`` with treatment status ``t``."""
    if t not in (0, 1):
        raise ValidationError(f"arm label must be 0 or 1, got {t!r}")
    idx = np.flatnonzero(ds.treatment == t)
    if len(idx) == 0:
        raise DegenerateArm(f"arm {t} is empty", arm=t)
    idx.flags.writeable = False
    return ArmView(ds, t, idx)


def realize(pop: SyntheticPopulation, z) -> Dataset:
    """Observed data under assignment ``z``: Y = z*y1 + (1-z)*y0."""
    z = np.asarray(getattr(z, "z", z))
    if len(z) != pop.n:
        raise LengthMismatch(f"assignment has length {len(z)}, population has {pop.n}")
    z = _check_binary(z)
    _check_arms(z)
    y = np.where(z == 1, pop.y1, pop.y0)
    return Dataset(pop.covariates, y, z, has_intercept=pop.has_intercept)


def _parse_float(text: str, line: int, column: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise NonNumericCell(
            f"cannot parse {text!r} as a number (line {line}, column {column!r})",
            line=line, column=column,
        ) from None
    if not math.isfinite(value):
        raise NonNumericCell(
            f"non-finite value {text!r} (line {line}, column {column!r})",
            line=line, column=column,
        )
    return value


def read_columns(path: str | PathLike, columns: Sequence[str]) -> dict[str, np.ndarray]:
    """Read the named numeric columns of a headed CSV file.

    Line numbers in errors count the header as line 1.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ValidationError(f"{path}: empty file") from None
        missing = [c for c in columns if c not in header]
        if missing:
            raise MissingColumn(f"{path}: missing column(s) {missing}", column=missing[0])
        pos = {c: header.index(c) for c in columns}
        values: dict[str, list[float]] = {c: [] for c in columns}
        for line, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            for c in columns:
                j = pos[c]
                cell = row[j].strip() if j < len(row) else ""
                values[c].append(_parse_float(cell, line, c))
    return {c: np.asarray(v, dtype=float) for c, v in values.items()}


def load_csv(
    path: str | PathLike,
    outcome_col: str,
    treatment_col: str,
    covariate_cols: Sequence[str],
    add_intercept: bool = True,
) -> Dataset:
    covariate_cols = list(covariate_cols)
    cols = read_columns(path, [outcome_col, treatment_col, *covariate_cols])
    z = cols[treatment_col]
    bad = ~np.isin(z, (0.0, 1.0))
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise NonBinaryTreatment(
            f"{path}: treatment value {z[i]:g} at data row {i} is not 0/1",
            row=i, column=treatment_col,
        )
    n = len(z)
    X = np.column_stack([cols[c] for c in covariate_cols]) if covariate_cols else np.empty((n, 0))
    names = list(covariate_cols)
    if add_intercept:
        X = np.column_stack([X, np.ones(n)])
        names.append("(intercept)")
    return Dataset(X, cols[outcome_col], z.astype(np.int8), has_intercept=add_intercept,
                   covariate_names=tuple(names))


def load_population_csv(
    path: str | PathLike,
    y1_col: str,
    y0_col: str,
    covariate_cols: Sequence[str],
    add_intercept: bool = True,
) -> SyntheticPopulation:
    covariate_cols = list(covariate_cols)
    cols = read_columns(path, [y1_col, y0_col, *covariate_cols])
    n = len(cols[y1_col])
    X = np.column_stack([cols[c] for c in covariate_cols]) if covariate_cols else np.empty((n, 0))
    if add_intercept:
        X = np.column_stack([X, np.ones(n)])
    return SyntheticPopulation(X, cols[y1_col], cols[y0_col], has_intercept=add_intercept)

"""Complete randomization: assignment sampling and exact enumeration."""

from __future__ import annotations

import itertools
import os
from collections.abc import Iterator, Sequence
from dataclasses import dataclass
from math import comb

import numpy as np

from .errors import EnumerationTooLarge, InvalidArmSize

DEFAULT_ENUM_CAP = 10**6
ENUM_CAP_ENV = "RAND_ADJUST_ENUM_CAP"


@dataclass(frozen=True)
class Assignment:
    z: np.ndarray
    n1: int

    def __post_init__(self):
        z = np.asarray(self.z, dtype=np.int8)
        z.flags.writeable = False
        object.__setattr__(self, "z", z)

    @property
    def n(self) -> int:
        return len(self.z)

    def key(self) -> tuple[int, ...]:
        return tuple(int(v) for v in self.z)


def rng_stream(seed: int, stream: int = 0) -> np.random.Generator:
    """Counter-based generator for replication ``stream`` under ``seed``.

    Philox keyed on (seed, stream): distinct streams are independent and each
    one depends on nothing but the pair.
    """
    seed, stream = int(seed), int(stream)
    if not (0 <= seed < 2**64 and 0 <= stream < 2**64):
        raise ValueError("seed and stream must fit in an unsigned 64-bit integer")
    return np.random.Generator(np.random.Philox(key=(seed << 64) | stream))


def _check_sizes(n: int, n1: int) -> None:
    if not (1 <= n1 <= n - 1):
        raise InvalidArmSize(f"need 1 <= n1 <= n-1, got n={n}, n1={n1}")


def sample_assignment(n: int, n1: int, seed: int | np.random.Generator) -> Assignment:
    """Uniform draw from all length-n binary vectors with exactly n1 ones.

    Partial Fisher-Yates over unit indices; the first k shuffled slots get the
    minority label, k = min(n1, n - n1).
    """
    _check_sizes(n, n1)
    rng = seed if isinstance(seed, np.random.Generator) else rng_stream(seed)
    k = min(n1, n - n1)
    idx = np.arange(n)
    picks = rng.integers(np.arange(k), n)
    for i, j in enumerate(picks.tolist()):
        idx[i], idx[j] = idx[j], idx[i]
    minority = 1 if k == n1 else 0
    z = np.full(n, 1 - minority, dtype=np.int8)
    z[idx[:k]] = minority
    return Assignment(z, n1)


def enumeration_cap(cap: int | None = None) -> int:
    if cap is not None:
        return int(cap)
    env = os.environ.get(ENUM_CAP_ENV)
    return int(env) if env else DEFAULT_ENUM_CAP


class AssignmentSpace(Sequence):
    """All C(n, n1) assignments in ascending lexicographic order of z.

    Lazy: items are generated on iteration or unranked on indexing.
    """

    def __init__(self, n: int, n1: int):
        self.n, self.n1 = n, n1
        self._len = comb(n, n1)

    def __len__(self) -> int:
        return self._len

    def __iter__(self) -> Iterator[Assignment]:
        # ascending z order == lexicographic order of the zero positions
        n, n1 = self.n, self.n1
        for zeros in itertools.combinations(range(n), n - n1):
            z = np.ones(n, dtype=np.int8)
            z[list(zeros)] = 0
            yield Assignment(z, n1)

    def __getitem__(self, r):
        if isinstance(r, slice):
            return [self[i] for i in range(*r.indices(len(self)))]
        if r < 0:
            r += len(self)
        if not 0 <= r < len(self):
            raise IndexError(r)
        # unrank: walk positions, a leading 0 covers comb(remaining-1, ones) vectors
        n, ones = self.n, self.n1
        z = np.zeros(n, dtype=np.int8)
        for i in range(n):
            rest = n - i - 1
            with_zero = comb(rest, ones) if ones <= rest else 0
            if r < with_zero:
                continue
            r -= with_zero
            z[i] = 1
            ones -= 1
        return Assignment(z, self.n1)


def enumerate_assignments(n: int, n1: int, cap: int | None = None) -> AssignmentSpace:
    _check_sizes(n, n1)
    limit = enumeration_cap(cap)
    total = comb(n, n1)
    if total > limit:
        raise EnumerationTooLarge(
            f"C({n}, {n1}) = {total} assignments exceeds the enumeration cap {limit}",
            assignments=total, cap=limit,
        )
    return AssignmentSpace(n, n1)

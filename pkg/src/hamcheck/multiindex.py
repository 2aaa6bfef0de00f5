"""Multi-indices and the combinatorial coefficients of the R/Q formulas.

A multi-index is a plain tuple of nonnegative ints, one entry per
independent variable.  All coefficient helpers return exact Python ints and
return 0 (never raise) for out-of-range arguments: the implicit summations in
the Jacobi expansion are delimited by exactly these vanishing coefficients.
"""
from __future__ import annotations

from functools import lru_cache
from itertools import product
from math import comb, factorial
from typing import Iterator, Sequence, Tuple, Union

MultiIndex = Tuple[int, ...]
IndexLike = Union[int, Sequence[int]]


def as_index(i: IndexLike, m: int | None = None) -> MultiIndex:
    """Coerce an int (m=1 shorthand) or a sequence to a multi-index tuple."""
    if isinstance(i, int):
        idx = (i,)
    else:
        idx = tuple(int(v) for v in i)
    if m is not None and len(idx) != m:
        raise ValueError(f"multi-index {idx} has length {len(idx)}, expected {m}")
    if any(v < 0 for v in idx):
        raise ValueError(f"multi-index {idx} has a negative entry")
    return idx


def order(i: MultiIndex) -> int:
    """Total order |i|."""
    return sum(i)


def zero(m: int) -> MultiIndex:
    return (0,) * m


def unit(mu: int, m: int) -> MultiIndex:
    """The multi-index (mu) with a single 1 in slot ``mu``."""
    return tuple(1 if k == mu else 0 for k in range(m))


def add(i: MultiIndex, j: MultiIndex) -> MultiIndex:
    return tuple(a + b for a, b in zip(i, j))


def sub(i: MultiIndex, j: MultiIndex) -> MultiIndex | None:
    """Componentwise ``i - j``, or ``None`` when some entry would go negative."""
    out = tuple(a - b for a, b in zip(i, j))
    if any(v < 0 for v in out):
        return None
    return out


def leq(i: MultiIndex, j: MultiIndex) -> bool:
    return all(a <= b for a, b in zip(i, j))


def box(upper: MultiIndex) -> Iterator[MultiIndex]:
    """All r with 0 <= r <= upper componentwise."""
    return product(*(range(u + 1) for u in upper))


def binom(i: IndexLike, r: IndexLike) -> int:
    """Multi-index binomial: product of scalar binomials, 0 when out of range."""
    i = (i,) if isinstance(i, int) else tuple(i)
    r = (r,) if isinstance(r, int) else tuple(r)
    out = 1
    for a, b in zip(i, r):
        if b < 0 or b > a:
            return 0
        out *= comb(a, b)
    return out


@lru_cache(maxsize=4096)
def _trinom_scalar(i: int, p: int, k: int, l: int) -> int:
    if min(p, k, l) < 0 or p + k + l != i:
        return 0
    return factorial(i) // (factorial(p) * factorial(k) * factorial(l))


def trinom(i: IndexLike, p: IndexLike, k: IndexLike, l: IndexLike) -> int:
    """Trinomial coefficient i!/(p! k! l!), 0 unless p + k + l = i with all parts >= 0."""
    if isinstance(i, int):
        return _trinom_scalar(i, p, k, l)  # type: ignore[arg-type]
    out = 1
    for parts in zip(i, p, k, l):
        c = _trinom_scalar(*parts)
        if c == 0:
            return 0
        out *= c
    return out


def binom_primed(i: int, k: int) -> int:
    """C(i, k) + 2 C(i, k-1) (scalar indices only)."""
    return binom(i, k) + 2 * binom(i, k - 1)


def trinom_primed(i: int, p: int, k: int, l: int) -> int:
    """(k - l) i!/(p! k! l!) when p + k + l = i + 1, else 0 (scalar indices only)."""
    if min(p, k, l) < 0 or p + k + l != i + 1 or i < 0:
        return 0
    return (k - l) * factorial(i) // (factorial(p) * factorial(k) * factorial(l))

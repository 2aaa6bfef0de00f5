"""Matrix horizontal differential operators in right normal form.

A :class:`DiffOp` with ``rows`` x ``cols`` blocks stores the coefficient of
``D^i`` in block ``(row, col)`` as ``entries[(row, col, i)]``; the operator
acts by ``(P v)_row = sum_{col, i} entries[row, col, i] * D^i v_col``.
"""
from __future__ import annotations

from typing import Dict, List, Mapping, Sequence, Tuple

from . import multiindex as mi
from .algebra import ZERO, Expr, as_expr, render
from .calculus import total_derivative, total_derivative_pow


class DimensionMismatch(ValueError):
    """Operand shapes do not fit together."""


class Unsupported(NotImplementedError):
    """Operation not available in this setting (e.g. m > 1)."""


class NotSkewAdjoint(ValueError):
    """A construction needs a skew-adjoint operator; ``defect`` holds P + P*."""

    def __init__(self, defect: "DiffOp"):
        self.defect = defect
        super().__init__(f"operator is not skew-adjoint; defect P + P* = {serialize(defect)}")


Key = Tuple[int, int, mi.MultiIndex]


class DiffOp:
    """Finitely supported operator ``sum P_i D^i`` between families of functions."""

    __slots__ = ("rows", "cols", "m", "entries")

    def __init__(self, entries: Mapping[Key, Expr], rows: int = 1, cols: int = 1, m: int = 1):
        self.rows = rows
        self.cols = cols
        self.m = m
        clean: Dict[Key, Expr] = {}
        for (r, c, i), v in entries.items():
            i = mi.as_index(i, m)
            if not (0 <= r < rows and 0 <= c < cols):
                raise DimensionMismatch(f"entry ({r}, {c}) outside a {rows}x{cols} operator")
            v = as_expr(v)
            if v:
                key = (r, c, i)
                clean[key] = clean[key] + v if key in clean else v
        self.entries = {k: v for k, v in sorted(clean.items()) if v}

    # -- constructors
    @classmethod
    def zero(cls, rows=1, cols=1, m=1) -> "DiffOp":
        return cls({}, rows, cols, m)

    @classmethod
    def identity(cls, n=1, m=1) -> "DiffOp":
        return cls({(a, a, mi.zero(m)): 1 for a in range(n)}, n, n, m)

    @classmethod
    def mult(cls, f, m=1) -> "DiffOp":
        """Scalar multiplication operator by the function ``f``."""
        return cls({(0, 0, mi.zero(m)): f}, 1, 1, m)

    @classmethod
    def D(cls, mu: int = 0, power: int = 1, m: int = 1) -> "DiffOp":
        idx = tuple(power if k == mu else 0 for k in range(m))
        return cls({(0, 0, idx): 1}, 1, 1, m)

    @classmethod
    def scalar(cls, coeffs: Sequence, m: int = 1) -> "DiffOp":
        """1x1 operator ``sum_i coeffs[i] D^i`` (m=1)."""
        return cls({(0, 0, (i,)): c for i, c in enumerate(coeffs)}, 1, 1, m)

    @classmethod
    def from_blocks(cls, blocks: Sequence[Sequence["DiffOp"]]) -> "DiffOp":
        """Assemble a matrix operator from a grid of 1x1 operators."""
        rows = len(blocks)
        cols = len(blocks[0]) if rows else 0
        if any(len(r) != cols for r in blocks):
            raise DimensionMismatch("ragged operator matrix")
        ms = {b.m for r in blocks for b in r}
        if len(ms) > 1:
            raise DimensionMismatch("mixed numbers of independent variables")
        m = ms.pop() if ms else 1
        entries: Dict[Key, Expr] = {}
        for a, row in enumerate(blocks):
            for b, blk in enumerate(row):
                if (blk.rows, blk.cols) != (1, 1):
                    raise DimensionMismatch("matrix cells must be scalar operators")
                for (_, _, i), v in blk.entries.items():
                    entries[(a, b, i)] = v
        return cls(entries, rows, cols, m)

    # -- derived data
    @property
    def is_zero(self) -> bool:
        return not self.entries

    @property
    def order(self) -> int:
        """Maximal |i| with a nonzero coefficient, -1 for the zero operator."""
        return max((mi.order(i) for (_, _, i) in self.entries), default=-1)

    def coeff(self, row: int, col: int, i) -> Expr:
        return self.entries.get((row, col, mi.as_index(i, self.m)), ZERO)

    def jet_order(self, i=None) -> int:
        """Maximal jet order in the coefficients (of ``D^i`` only, if given)."""
        idx = None if i is None else mi.as_index(i, self.m)
        return max(
            (v.jet_order() for (_, _, j), v in self.entries.items() if idx is None or j == idx),
            default=-1,
        )

    def block(self, row: int, col: int) -> Dict[mi.MultiIndex, Expr]:
        return {i: v for (r, c, i), v in self.entries.items() if r == row and c == col}

    # -- algebra
    def __eq__(self, other):
        if not isinstance(other, DiffOp):
            return NotImplemented
        return (self.rows, self.cols, self.m, self.entries) == (other.rows, other.cols, other.m, other.entries)

    def __hash__(self):
        return hash((self.rows, self.cols, frozenset(self.entries.items())))

    def _check_same(self, other: "DiffOp"):
        if (self.rows, self.cols, self.m) != (other.rows, other.cols, other.m):
            raise DimensionMismatch(
                f"cannot combine {self.rows}x{self.cols} and {other.rows}x{other.cols} operators"
            )

    def __add__(self, other):
        if not isinstance(other, DiffOp):
            return NotImplemented
        self._check_same(other)
        out = dict(self.entries)
        for k, v in other.entries.items():
            out[k] = out[k] + v if k in out else v
        return DiffOp(out, self.rows, self.cols, self.m)

    def __neg__(self):
        return DiffOp({k: -v for k, v in self.entries.items()}, self.rows, self.cols, self.m)

    def __sub__(self, other):
        if not isinstance(other, DiffOp):
            return NotImplemented
        return self + (-other)

    def scale(self, f) -> "DiffOp":
        """Left multiplication of every coefficient by the function ``f``."""
        f = as_expr(f)
        return DiffOp({k: f * v for k, v in self.entries.items()}, self.rows, self.cols, self.m)

    def __matmul__(self, other):
        if not isinstance(other, DiffOp):
            return NotImplemented
        return compose(self, other)

    def __call__(self, v):
        return apply(self, v)

    def __repr__(self):
        return f"DiffOp({self.rows}x{self.cols}, {serialize(self)})"


def _vector(v, n: int) -> List[Expr]:
    if isinstance(v, (Expr, int)):
        v = [v]
    v = [as_expr(c) for c in v]
    if len(v) != n:
        raise DimensionMismatch(f"expected a vector of length {n}, got {len(v)}")
    return v


def apply(P: DiffOp, v) -> List[Expr]:
    """(P v)_row = sum coefficient * D^i v_col."""
    v = _vector(v, P.cols)
    cache: Dict[Tuple[int, mi.MultiIndex], Expr] = {}
    out = [ZERO] * P.rows
    for (r, c, i), coeff in P.entries.items():
        key = (c, i)
        if key not in cache:
            cache[key] = total_derivative_pow(v[c], i)
        out[r] = out[r] + coeff * cache[key]
    return out


def _leibniz(i: mi.MultiIndex, f: Expr, m: int) -> Dict[mi.MultiIndex, Expr]:
    """Normal form of D^i o f: sum_r binom(i, r) D^{i-r}(f) D^r."""
    out: Dict[mi.MultiIndex, Expr] = {}
    for r in mi.box(i):
        c = mi.binom(i, r)
        d = total_derivative_pow(f, mi.sub(i, r))
        if d:
            out[r] = d * c
    return out


def compose(P: DiffOp, Q: DiffOp) -> DiffOp:
    """Normal form of P o Q via the generalized Leibniz rule."""
    if P.cols != Q.rows or P.m != Q.m:
        raise DimensionMismatch(f"cannot compose {P.rows}x{P.cols} with {Q.rows}x{Q.cols}")
    m = P.m
    out: Dict[Key, Expr] = {}
    for (a, b, i), p in P.entries.items():
        for (b2, c, j), q in Q.entries.items():
            if b2 != b:
                continue
            for r, d in _leibniz(i, q, m).items():
                key = (a, c, mi.add(r, j))
                term = p * d
                out[key] = out[key] + term if key in out else term
    return DiffOp(out, P.rows, Q.cols, m)


def adjoint(P: DiffOp) -> DiffOp:
    """Lagrange adjoint: transposed blocks with entries (-D)^i o P_i in normal form."""
    m = P.m
    out: Dict[Key, Expr] = {}
    for (a, b, i), p in P.entries.items():
        sign = -1 if mi.order(i) % 2 else 1
        for r, d in _leibniz(i, p, m).items():
            key = (b, a, r)
            term = d * sign
            out[key] = out[key] + term if key in out else term
    return DiffOp(out, P.cols, P.rows, m)


def skew_defect(P: DiffOp) -> DiffOp:
    """P + P*; the zero operator iff P is skew-adjoint."""
    if P.rows != P.cols:
        raise DimensionMismatch("skew-adjointness needs a square operator")
    return P + adjoint(P)


def pairing(a: Sequence, b: Sequence) -> Expr:
    if len(a) != len(b):
        raise DimensionMismatch(f"pairing of lengths {len(a)} and {len(b)}")
    out = ZERO
    for p, q in zip(a, b):
        out = out + as_expr(p) * as_expr(q)
    return out


def green_current(P: DiffOp, zeta, eta) -> Expr:
    """Current psi with <zeta, P eta> - <P* zeta, eta> = D psi (m = 1).

    The identity is checked on the result before returning.
    """
    if P.m != 1:
        raise Unsupported("Green currents are only provided for one independent variable")
    zeta = _vector(zeta, P.rows)
    eta = _vector(eta, P.cols)
    psi = ZERO
    for (a, b, (i,)), p in P.entries.items():
        if i == 0:
            continue
        f = zeta[a] * p
        for q in range(i):
            term = total_derivative_pow(f, q) * total_derivative_pow(eta[b], i - 1 - q)
            psi = psi - term if q % 2 else psi + term
    defect = pairing(zeta, apply(P, eta)) - pairing(apply(adjoint(P), zeta), eta)
    if total_derivative(psi) != defect:  # pragma: no cover - would be an engine bug
        raise AssertionError("Green current failed its own check")
    return psi


def serialize(P: DiffOp, m_render: int | None = None, n_dep: int | None = None, names=None) -> List[dict]:
    """Normal-form listing ``[{row, col, i, coeff}]`` sorted by (row, col, i)."""
    m = P.m if m_render is None else m_render
    nd = max(P.rows, P.cols) if n_dep is None else n_dep
    return [
        {"row": r, "col": c, "i": list(i), "coeff": render(v, m, nd, names)}
        for (r, c, i), v in sorted(P.entries.items())
    ]

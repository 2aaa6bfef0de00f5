"""Exact evaluation oracle for the strengthened Jacobi identity.

Densities are evaluated on periodic data ``u(x)`` given by trigonometric
polynomials with rational coefficients.  Every total derivative then has zero
mean over a period, so the period mean realizes the functional ``∫ K`` with no
rounding at all.  The Jacobi expression is assembled only from evolutionary
derivations and operator application; nothing here touches the R/Q tensors.
"""
from __future__ import annotations

import random
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, List, Optional, Tuple

from gmpy2 import mpq

from .algebra import Expr, FnSym, IndepVar, JetVar, _by_id, as_expr, p_is_const, u
from .calculus import ev
from .operators import DiffOp, DimensionMismatch, NotSkewAdjoint, apply, pairing, skew_defect


class OpaqueSymbolPresent(ValueError):
    """The expression contains an uninterpreted function symbol."""


class NonConstantDenominator(ValueError):
    """The denominator does not evaluate to a nonzero constant."""


class UnsupportedDimension(ValueError):
    """Only one independent variable is supported by the oracle."""


class NonPeriodicAtom(ValueError):
    """The independent variable itself is not a periodic function."""


_ZERO = mpq(0)


class TrigPoly:
    """Finite sum of c_w cos(w x) + s_w sin(w x), w >= 0, exact rational coefficients."""

    __slots__ = ("coeffs",)

    def __init__(self, coeffs: Optional[Dict[int, Tuple]] = None):
        clean: Dict[int, Tuple[mpq, mpq]] = {}
        for w, (c, s) in (coeffs or {}).items():
            if w < 0:
                raise ValueError("frequencies must be nonnegative")
            c, s = mpq(c), mpq(s)
            if w == 0:
                s = _ZERO
            if c or s:
                clean[w] = (c, s)
        self.coeffs = dict(sorted(clean.items()))

    @classmethod
    def const(cls, c) -> "TrigPoly":
        return cls({0: (c, 0)})

    @classmethod
    def cos(cls, w: int = 1, c=1) -> "TrigPoly":
        return cls({w: (c, 0)})

    @classmethod
    def sin(cls, w: int = 1, s=1) -> "TrigPoly":
        return cls({w: (0, s)})

    def __eq__(self, other):
        if isinstance(other, (int, Fraction)) or type(other).__name__ == "mpq":
            other = TrigPoly.const(other)
        if not isinstance(other, TrigPoly):
            return NotImplemented
        return self.coeffs == other.coeffs

    def __hash__(self):
        return hash(tuple(self.coeffs.items()))

    def __bool__(self):
        return bool(self.coeffs)

    def is_constant(self) -> bool:
        return all(w == 0 for w in self.coeffs)

    def constant(self) -> mpq:
        return self.coeffs.get(0, (_ZERO, _ZERO))[0]

    def __add__(self, other):
        other = _as_trig(other)
        out = dict(self.coeffs)
        for w, (c, s) in other.coeffs.items():
            c0, s0 = out.get(w, (_ZERO, _ZERO))
            out[w] = (c0 + c, s0 + s)
        return TrigPoly(out)

    __radd__ = __add__

    def __neg__(self):
        return TrigPoly({w: (-c, -s) for w, (c, s) in self.coeffs.items()})

    def __sub__(self, other):
        return self + (-_as_trig(other))

    def __rsub__(self, other):
        return _as_trig(other) - self

    def __mul__(self, other):
        other = _as_trig(other)
        out: Dict[int, List[mpq]] = {}

        def put(w, c, s):
            if w < 0:
                w, s = -w, -s
            acc = out.setdefault(w, [_ZERO, _ZERO])
            acc[0] += c
            acc[1] += s

        for a, (ca, sa) in self.coeffs.items():
            for b, (cb, sb) in other.coeffs.items():
                # product-to-sum identities, each term halved
                if ca and cb:
                    h = ca * cb / 2
                    put(a - b, h, 0)
                    put(a + b, h, 0)
                if sa and sb:
                    h = sa * sb / 2
                    put(a - b, h, 0)
                    put(a + b, -h, 0)
                if sa and cb:
                    h = sa * cb / 2
                    put(a + b, 0, h)
                    put(a - b, 0, h)
                if ca and sb:
                    h = ca * sb / 2
                    put(a + b, 0, h)
                    put(b - a, 0, h)
        return TrigPoly({w: tuple(v) for w, v in out.items()})

    __rmul__ = __mul__

    def __pow__(self, n: int):
        if n < 0:
            raise ValueError("negative powers of trigonometric polynomials are not closed")
        result = TrigPoly.const(1)
        base = self
        while n:
            if n & 1:
                result = result * base
            n >>= 1
            if n:
                base = base * base
        return result

    def derivative(self, times: int = 1) -> "TrigPoly":
        out = self
        for _ in range(times):
            out = TrigPoly({w: (s * w, -c * w) for w, (c, s) in out.coeffs.items()})
        return out

    def mean(self) -> mpq:
        return self.constant()

    def __repr__(self):
        parts = []
        for w, (c, s) in self.coeffs.items():
            if w == 0:
                parts.append(str(c))
                continue
            if c:
                parts.append(f"{c}*cos({w}x)")
            if s:
                parts.append(f"{s}*sin({w}x)")
        return "TrigPoly(" + (" + ".join(parts) or "0") + ")"


def _as_trig(v) -> TrigPoly:
    if isinstance(v, TrigPoly):
        return v
    return TrigPoly.const(v)


@dataclass
class SampleAssignment:
    """Periodic data u^alpha(x); jet coordinates evaluate to analytic derivatives."""

    per_dep: List[TrigPoly]
    _jets: Dict[Tuple[int, int], TrigPoly] = field(default_factory=dict, repr=False, compare=False)

    def jet(self, alpha: int, i: int) -> TrigPoly:
        key = (alpha, i)
        hit = self._jets.get(key)
        if hit is None:
            if alpha >= len(self.per_dep):
                raise DimensionMismatch(f"no sample for dependent variable {alpha}")
            hit = self.per_dep[alpha] if i == 0 else self.jet(alpha, i - 1).derivative()
            self._jets[key] = hit
        return hit


def _eval_poly(p, a: SampleAssignment, powers: Dict) -> TrigPoly:
    total = TrigPoly()
    for mono, c in p.items():
        term = TrigPoly.const(c)
        for aid, e in mono:
            key = (aid, e)
            val = powers.get(key)
            if val is None:
                atom = _by_id[aid]
                if isinstance(atom, FnSym):
                    raise OpaqueSymbolPresent(f"cannot evaluate opaque symbol {atom.name}")
                if isinstance(atom, IndepVar):
                    raise NonPeriodicAtom("the independent variable is not periodic")
                if len(atom.index) != 1:
                    raise UnsupportedDimension("the oracle handles one independent variable")
                val = powers[key] = a.jet(atom.alpha, atom.index[0]) ** e
            term = term * val
        total = total + term
    return total


def _check_dimension(e: Expr):
    for atom in e.coordinates():
        if isinstance(atom, JetVar) and len(atom.index) != 1:
            raise UnsupportedDimension("the oracle handles one independent variable")


def eval_expr(e, a: SampleAssignment) -> TrigPoly:
    """Exact value of ``e`` along the sampled data."""
    e = as_expr(e)
    _check_dimension(e)
    if e.fn_atoms():
        raise OpaqueSymbolPresent("expression contains opaque function symbols")
    powers: Dict = {}
    num = _eval_poly(e.num, a, powers)
    if p_is_const(e.den):
        return num
    den = _eval_poly(e.den, a, powers)
    if not den.is_constant() or not den:
        raise NonConstantDenominator("denominator does not evaluate to a nonzero constant")
    return num * (1 / den.constant())


def functional(t: TrigPoly) -> mpq:
    """Period mean: the exact value of ∫ over one period, normalized."""
    return t.mean()


def integral(e, a: SampleAssignment) -> mpq:
    return functional(eval_expr(e, a))


def _vec(v, n) -> List[Expr]:
    if isinstance(v, (Expr, int)):
        v = [v]
    v = [as_expr(x) for x in v]
    if len(v) != n:
        raise DimensionMismatch(f"expected {n} components, got {len(v)}")
    return v


def commutator_term(lam: DiffOp, f, g, h) -> Expr:
    """<f, [ev_{Lambda g}, Lambda] h> = <f, ev_phi(Lambda h) - Lambda(ev_phi h)>, phi = Lambda g."""
    n = lam.rows
    f, g, h = _vec(f, n), _vec(g, n), _vec(h, n)
    phi = apply(lam, g)
    first = [ev(phi, c) for c in apply(lam, h)]
    second = apply(lam, [ev(phi, c) for c in h])
    return pairing(f, [p - q for p, q in zip(first, second)])


def jacobi_density(lam: DiffOp, f, g, h) -> Expr:
    """Cyclic sum of commutator terms over (f, g, h)."""
    return commutator_term(lam, f, g, h) + commutator_term(lam, g, h, f) + commutator_term(lam, h, f, g)


def jacobi_residual(lam: DiffOp, f, g, h, a: SampleAssignment) -> mpq:
    """Exact ∫ over a period of the strengthened Jacobi expression."""
    if lam.m != 1:
        raise UnsupportedDimension("the oracle handles one independent variable")
    if lam.rows != lam.cols:
        raise DimensionMismatch("a Poisson operator must be square")
    defect = skew_defect(lam)
    if not defect.is_zero:
        raise NotSkewAdjoint(defect)
    for c in lam.entries.values():
        if c.fn_atoms():
            raise OpaqueSymbolPresent("operator coefficients contain opaque function symbols")
    return integral(jacobi_density(lam, f, g, h), a)


# ---------------------------------------------------------------- random data


def _small_rational(rng: random.Random) -> mpq:
    return mpq(rng.randint(-3, 3), rng.randint(1, 3))


def random_trig(rng: random.Random, max_freq: int = 3) -> TrigPoly:
    coeffs = {}
    for w in range(max_freq + 1):
        if rng.random() < 0.7:
            coeffs[w] = (_small_rational(rng), _small_rational(rng) if w else 0)
    tp = TrigPoly(coeffs)
    if tp.is_constant():
        tp = tp + TrigPoly.cos(rng.randint(1, max_freq), rng.choice([1, -1, 2]))
    return tp


def random_assignment(rng: random.Random, n_dep: int = 1, max_freq: int = 3) -> SampleAssignment:
    return SampleAssignment([random_trig(rng, max_freq) for _ in range(n_dep)])


def random_density(rng: random.Random, n_dep: int = 1, order: int = 2, degree: int = 2, terms: int = 4) -> Expr:
    """Random differential polynomial of jet order <= order and degree <= degree."""
    jets = [u(i, alpha) for alpha in range(n_dep) for i in range(order + 1)]
    out = Expr.const(0)
    for _ in range(terms):
        term = Expr.const(_small_rational(rng))
        for _ in range(rng.randint(0, degree)):
            term = term * rng.choice(jets)
        out = out + term
    if out.is_zero():
        out = Expr.const(1)
    return out


@dataclass
class OracleReport:
    seed: int
    trials: int
    residuals: List[mpq]

    @property
    def all_zero(self) -> bool:
        return all(r == 0 for r in self.residuals)

    def to_json(self) -> dict:
        return {"seed": self.seed, "trials": self.trials, "residuals": [str(r) for r in self.residuals]}


def run_trials(lam: DiffOp, seed: int = 0, trials: int = 20) -> OracleReport:
    """Residuals of ``trials`` random (f, g, h, assignment) draws from one seeded stream."""
    rng = random.Random(seed)
    n = lam.rows
    out = []
    for _ in range(trials):
        f, g, h = ([random_density(rng, n) for _ in range(n)] for _ in range(3))
        a = random_assignment(rng, n)
        out.append(jacobi_residual(lam, f, g, h, a))
    return OracleReport(seed, trials, out)

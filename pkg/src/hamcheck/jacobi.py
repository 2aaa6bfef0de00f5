"""The defining system of a Hamiltonian operator.

For a skew-adjoint operator Lambda the strengthened Jacobi identity
``sum_cyc <f, [ev_{Lambda g}, Lambda] h> = 0 (mod Div)`` is equivalent to the
vanishing of every entry of the Q-tensor built here.  Tensors are sparse maps
``(alpha, beta, gamma, k, l) -> Expr`` where ``k`` and ``l`` are multi-indices
and the entry multiplies ``D^k g_beta * D^l h_gamma``.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

from . import multiindex as mi
from .algebra import ZERO, Expr, JetVar, as_expr, partial, render
from .calculus import euler, total_derivative, total_derivative_pow
from .operators import (
    DimensionMismatch,
    DiffOp,
    NotSkewAdjoint,
    Unsupported,
    apply,
    pairing,
    serialize,
    skew_defect,
)

TKey = Tuple[int, int, int, mi.MultiIndex, mi.MultiIndex]


class ScatterLimitExceeded(RuntimeError):
    """The Q scatter would need more total derivatives than the configured cap."""


class Tensor:
    """Sparse coefficient tensor; zero entries are never stored."""

    __slots__ = ("entries", "m", "n_dep")

    def __init__(self, entries: Dict[TKey, Expr], m: int = 1, n_dep: int = 1):
        self.entries = {k: v for k, v in sorted(entries.items()) if v}
        self.m = m
        self.n_dep = n_dep

    def __getitem__(self, key) -> Expr:
        """``T[k, l]`` (scalar m=1 case) or ``T[alpha, beta, gamma, k, l]``."""
        if len(key) == 2:
            key = (0, 0, 0) + tuple(key)
        a, b, c, k, l = key
        k = (k,) if isinstance(k, int) else tuple(k)
        l = (l,) if isinstance(l, int) else tuple(l)
        if min(k + l) < 0:  # negative positions read as zero
            return ZERO
        return self.entries.get((a, b, c, mi.as_index(k, self.m), mi.as_index(l, self.m)), ZERO)

    def __iter__(self) -> Iterator[TKey]:
        return iter(self.entries)

    def __len__(self):
        return len(self.entries)

    def items(self):
        return self.entries.items()

    @property
    def is_zero(self) -> bool:
        return not self.entries

    def index_pairs(self) -> List[Tuple[mi.MultiIndex, mi.MultiIndex]]:
        return sorted({(k, l) for (_, _, _, k, l) in self.entries})

    def __eq__(self, other):
        if not isinstance(other, Tensor):
            return NotImplemented
        return self.entries == other.entries

    def to_json(self, names: Optional[Sequence[str]] = None) -> List[dict]:
        return [
            {"alpha": a, "beta": b, "gamma": c, "k": list(k), "l": list(l),
             "expr": render(v, self.m, self.n_dep, names)}
            for (a, b, c, k, l), v in self.entries.items()
        ]

    def __repr__(self):
        return f"{type(self).__name__}({len(self.entries)} entries)"


class RTensor(Tensor):
    pass


class QTensor(Tensor):
    @property
    def witnesses(self) -> List[Tuple[TKey, Expr]]:
        """Nonzero entries; the operator is Hamiltonian iff this is empty."""
        return list(self.entries.items())


def _accumulate(out: Dict, key, val: Expr):
    if val:
        out[key] = out[key] + val if key in out else val


def _check_square(lam: DiffOp):
    if lam.rows != lam.cols:
        raise DimensionMismatch("a Poisson operator must be square")


def r_tensor(lam: DiffOp) -> RTensor:
    """R^{abc}_{kl} = sum binom(i, r) D^{i-r} Lam^{eb}_{k-r} * d Lam^{ac}_l / d u^e_i."""
    _check_square(lam)
    m = lam.m
    by_row: Dict[int, List[Tuple[int, mi.MultiIndex, Expr]]] = {}
    for (e, b, j), v in lam.entries.items():
        by_row.setdefault(e, []).append((b, j, v))
    dcache: Dict[Tuple[int, int, mi.MultiIndex, mi.MultiIndex], Expr] = {}
    out: Dict[TKey, Expr] = {}
    for (a, c, l), coeff in lam.entries.items():
        jets = sorted(x for x in coeff.coordinates() if isinstance(x, JetVar))
        for atom in jets:
            d = partial(coeff, atom)
            if not d:
                continue
            e, i = atom.alpha, atom.index
            for b, j, v in by_row.get(e, ()):
                for r in mi.box(i):
                    q = mi.sub(i, r)
                    ck = (e, b, j, q)
                    dv = dcache.get(ck)
                    if dv is None:
                        dv = dcache[ck] = total_derivative_pow(v, q)
                    if dv:
                        _accumulate(out, (a, b, c, mi.add(j, r), l), dv * d * mi.binom(i, r))
    return RTensor(out, m, lam.rows)


def _scatter(lam: DiffOp, max_order: Optional[int], R: Optional[RTensor]):
    _check_square(lam)
    defect = skew_defect(lam)
    if not defect.is_zero:
        raise NotSkewAdjoint(defect)
    if R is None:
        R = r_tensor(lam)
    m = lam.m
    first: Dict[TKey, Expr] = {}
    second: Dict[TKey, Expr] = {}
    cache: Dict[Tuple[TKey, mi.MultiIndex], Expr] = {}
    lock = threading.Lock()

    def dpow(key: TKey, p: mi.MultiIndex) -> Expr:
        if max_order is not None and mi.order(p) > max_order:
            raise ScatterLimitExceeded(
                f"scatter needs D^{mi.order(p)} of an R entry, above the cap {max_order}"
            )
        hit = cache.get((key, p))
        if hit is None:
            if not any(p):
                hit = R.entries[key]
            else:
                mu = next(n for n, e in enumerate(p) if e)
                hit = total_derivative(dpow(key, mi.sub(p, mi.unit(mu, m))), mu)
            with lock:
                cache[(key, p)] = hit
        return hit

    for key in R.entries:
        a, b, c, i, j = key
        # R^{bca}_{ij} feeds Q^{abc}_{kl} with (-1)^{|j|} trinom(j; p, k, l-i)
        sj = -1 if mi.order(j) % 2 else 1
        for k in mi.box(j):
            rest = mi.sub(j, k)
            for t in mi.box(rest):
                p = mi.sub(rest, t)
                coef = mi.trinom(j, p, k, t)
                if coef:
                    _accumulate(first, (c, a, b, k, mi.add(i, t)), dpow(key, p) * (sj * coef))
        # R^{cab}_{ij} feeds Q^{abc}_{kl} with (-1)^{|i|} trinom(i; p, k-j, l)
        si = -1 if mi.order(i) % 2 else 1
        for l in mi.box(i):
            rest = mi.sub(i, l)
            for t in mi.box(rest):
                p = mi.sub(rest, t)
                coef = mi.trinom(i, p, t, l)
                if coef:
                    _accumulate(second, (b, c, a, mi.add(j, t), l), dpow(key, p) * (si * coef))
    return R, first, second


def q_tensor_parts(lam: DiffOp, max_order: Optional[int] = None) -> Tuple[RTensor, Tensor, Tensor]:
    """The three summands (R, Q', Q'') of the Q-tensor."""
    R, first, second = _scatter(lam, max_order, None)
    return R, Tensor(first, lam.m, lam.rows), Tensor(second, lam.m, lam.rows)


def q_tensor(lam: DiffOp, max_order: Optional[int] = None, R: Optional[RTensor] = None) -> QTensor:
    """The Q-tensor of a skew-adjoint operator, scattered from the nonzero R entries.

    ``max_order`` caps the number of total derivatives applied to any R entry.
    """
    R, first, second = _scatter(lam, max_order, R)
    out = dict(R.entries)
    for part in (first, second):
        for key, val in part.items():
            _accumulate(out, key, val)
    return QTensor(out, lam.m, lam.rows)


def first_order_operator(lam) -> DiffOp:
    """The scalar operator lam*D + 1/2*D(lam) (m = 1)."""
    lam = as_expr(lam)
    return DiffOp({(0, 0, (1,)): lam, (0, 0, (0,)): total_derivative(lam) / 2})


def _scalar_lambda(e) -> Expr:
    e = as_expr(e)
    for a in e.coordinates():
        if isinstance(a, JetVar) and (a.alpha != 0 or len(a.index) != 1):
            raise Unsupported("the first-order route needs m = 1 and one dependent variable")
    return e


def r_tensor_firstorder(lam) -> RTensor:
    """R for lam*D + 1/2*D(lam) from the closed forms for R_{k1} and R_{k0}."""
    lam = _scalar_lambda(lam)
    n = lam.jet_order()
    r1: Dict[int, Expr] = {}
    for i in range(n + 1):
        d = partial(lam, JetVar(0, (i,)))
        if not d:
            continue
        for k in range(i + 2):
            c = mi.binom_primed(i, k)
            if c:
                _accumulate(r1, k, total_derivative_pow(lam, i + 1 - k) * d * c / 2)
    out: Dict[TKey, Expr] = {}
    top = max(r1, default=-1)
    for k in range(top + 2):
        v1 = r1.get(k, ZERO)
        _accumulate(out, (0, 0, 0, (k,), (1,)), v1)
        _accumulate(out, (0, 0, 0, (k,), (0,)), (total_derivative(v1) + r1.get(k - 1, ZERO)) / 2)
    return RTensor(out, 1, 1)


def q_tensor_firstorder(lam) -> QTensor:
    """Q for lam*D + 1/2*D(lam) via Q_{kl} = R_{kl} - R_{lk} + sum_i (-1)^i/2 trinom'(i,p,k,l) D^p R_{i1}."""
    R = r_tensor_firstorder(lam)
    r1 = {k[0]: v for (_, _, _, k, l), v in R.entries.items() if l == (1,)}
    if not R.entries:
        return QTensor({}, 1, 1)
    top = max(max(k[0], l[0]) for (_, _, _, k, l) in R.entries)
    out: Dict[TKey, Expr] = {}
    for k in range(top + 2):
        for l in range(top + 2):
            val = R[k, l] - R[l, k]
            for i, ri in r1.items():
                p = i + 1 - k - l
                if p < 0:
                    continue
                c = mi.trinom_primed(i, p, k, l)
                if c:
                    term = total_derivative_pow(ri, p) * c / 2
                    val = val - term if i % 2 else val + term
            _accumulate(out, (0, 0, 0, (k,), (l,)), val)
    return QTensor(out, 1, 1)


@dataclass
class Supports:
    R: List[Tuple[int, int]]
    Q_prime: List[Tuple[int, int]]
    Q_double_prime: List[Tuple[int, int]]

    @property
    def Q(self) -> List[Tuple[int, int]]:
        return sorted(set(self.R) | set(self.Q_prime) | set(self.Q_double_prime))

    def to_json(self) -> dict:
        return {
            "R": [list(p) for p in self.R],
            "Q_prime": [list(p) for p in self.Q_prime],
            "Q_double_prime": [list(p) for p in self.Q_double_prime],
            "Q": [list(p) for p in self.Q],
        }


def supports(lam: DiffOp) -> Supports:
    """Index regions where R, Q' and Q'' can be nonzero, from s and n(l) (scalar, m = 1)."""
    if lam.m != 1:
        raise Unsupported("explicit supports are only available for m = 1")
    if lam.rows != 1 or lam.cols != 1:
        raise Unsupported("explicit supports are only available for one dependent variable")
    s = lam.order
    supp_r = []
    for l in range(s + 1):
        n_l = lam.jet_order(l)
        if n_l < 0:
            continue
        supp_r.extend((k, l) for k in range(n_l + s + 1))
    supp_r.sort()
    qp, qpp = set(), set()
    for i, j in supp_r:
        for k in range(j + 1):
            for l in range(i, i + j - k + 1):
                qp.add((k, l))
        for l in range(i + 1):
            for k in range(j, i + j - l + 1):
                qpp.add((k, l))
    return Supports(supp_r, sorted(qp), sorted(qpp))


def lemma2_density(lam: DiffOp, g, h) -> List[Expr]:
    """Literal R-form of the Jacobi density, one Expr per free index alpha."""
    n = lam.rows
    g = _vec(g, n)
    h = _vec(h, n)
    R = r_tensor(lam)
    out = [ZERO] * n
    for (a, b, c, k, l), v in R.entries.items():
        out[a] = out[a] + v * total_derivative_pow(g[b], k) * total_derivative_pow(h[c], l)
        t2 = total_derivative_pow(v * g[a] * total_derivative_pow(h[b], k), l)
        out[c] = out[c] - t2 if mi.order(l) % 2 else out[c] + t2
        t3 = total_derivative_pow(v * total_derivative_pow(g[c], l) * h[a], k)
        out[b] = out[b] - t3 if mi.order(k) % 2 else out[b] + t3
    return out


def q_density(Q: Tensor, g, h) -> List[Expr]:
    """sum Q^{abc}_{kl} D^k g_b D^l h_c as an alpha-indexed vector."""
    g = _vec(g, Q.n_dep)
    h = _vec(h, Q.n_dep)
    out = [ZERO] * Q.n_dep
    for (a, b, c, k, l), v in Q.entries.items():
        out[a] = out[a] + v * total_derivative_pow(g[b], k) * total_derivative_pow(h[c], l)
    return out


def _vec(v, n) -> List[Expr]:
    if isinstance(v, (Expr, int)):
        v = [v]
    v = [as_expr(x) for x in v]
    if len(v) != n:
        raise DimensionMismatch(f"expected {n} components, got {len(v)}")
    return v


def variational_gradient(K, n_dep: int) -> List[Expr]:
    return [euler(K, a) for a in range(n_dep)]


def bracket_density(K, L, lam: DiffOp) -> Expr:
    """<delta K, Lambda delta L>, a density of the Poisson bracket of the two functionals."""
    _check_square(lam)
    dK = variational_gradient(K, lam.rows)
    dL = variational_gradient(L, lam.rows)
    return pairing(dK, apply(lam, dL))


@dataclass
class Verdict:
    skew: bool
    defect: DiffOp
    hamiltonian: bool
    q: Optional[QTensor] = None
    supports: Optional[Supports] = None
    witnesses: List[Tuple[TKey, Expr]] = field(default_factory=list)

    def to_json(self, names: Optional[Sequence[str]] = None) -> dict:
        return {
            "skew": self.skew,
            "defect": serialize(self.defect, names=names),
            "hamiltonian": self.hamiltonian,
            "entries": self.q.to_json(names) if self.q is not None else [],
            "supports": self.supports.to_json() if self.supports is not None else None,
        }


def _supports_or_none(lam: DiffOp) -> Optional[Supports]:
    try:
        return supports(lam)
    except Unsupported:
        return None


def is_hamiltonian(lam: DiffOp, max_order: Optional[int] = None, fast_path: bool = False) -> Verdict:
    """Exact verdict: skew-adjoint and every Q entry is canonically zero.

    With ``fast_path`` the operator must be lam*D + 1/2*D(lam) and the closed
    first-order formulas are used.
    """
    defect = skew_defect(lam)
    if not defect.is_zero:
        return Verdict(False, defect, False, None, _supports_or_none(lam))
    if fast_path:
        Q = q_tensor_firstorder(first_order_lambda(lam))
    else:
        Q = q_tensor(lam, max_order=max_order)
    return Verdict(True, defect, Q.is_zero, Q, _supports_or_none(lam), Q.witnesses)


def first_order_lambda(lam: DiffOp) -> Expr:
    """Recover lam from an operator of the form lam*D + 1/2*D(lam), or raise."""
    if lam.m != 1 or lam.rows != 1 or lam.cols != 1 or lam.order > 1:
        raise Unsupported("the first-order route needs a scalar operator lam*D + 1/2*D(lam)")
    coeff = lam.coeff(0, 0, 1)
    if lam != first_order_operator(coeff):
        raise Unsupported("operator is not of the form lam*D + 1/2*D(lam)")
    return coeff

"""Exact rational-function expressions over jet coordinates and opaque symbols.

An :class:`Expr` is a reduced fraction ``num/den`` of sparse polynomials with
rational coefficients.  The polynomial variables are :class:`Atom` objects:

* :class:`IndepVar` -- an independent variable ``x^mu``;
* :class:`JetVar`   -- a jet coordinate ``u^alpha_i`` (``i`` a multi-index);
* :class:`FnSym`    -- an uninterpreted smooth function applied to Expr
  arguments, carrying per-slot derivative counts.

Canonical form: ``gcd(num, den)`` is a unit and ``den`` is monic with respect
to the graded-lex order over the atom total order, so equal values are
structurally equal.  Atoms are interned (one object per structural value) and
each carries a process-local integer id used for fast monomial bookkeeping;
ordering and printing never depend on those ids.
"""
from __future__ import annotations

import threading
from typing import Callable, Dict, Mapping, Optional, Sequence, Tuple

from gmpy2 import mpq, mpz

from . import multiindex as mi

Mono = Tuple[Tuple[int, int], ...]
Poly = Dict[Mono, "mpq"]

ONE_MONO: Mono = ()


class DivisionByZero(ZeroDivisionError):
    """Division by an expression that is identically zero."""


class InvalidAtom(ValueError):
    """Differentiation requested with respect to a non-coordinate atom."""


# ---------------------------------------------------------------- atoms

_intern_lock = threading.Lock()
_intern: Dict[tuple, "Atom"] = {}
_by_id: list = []


class Atom:
    """Interned polynomial variable.  Compare with ``==``; identity is equality."""

    __slots__ = ("id", "_key", "__weakref__")
    tag = -1

    def __new__(cls, *fields):
        skey = (cls.tag,) + fields
        atom = _intern.get(skey)
        if atom is not None:
            return atom
        with _intern_lock:
            atom = _intern.get(skey)
            if atom is None:
                atom = object.__new__(cls)
                atom._init(*fields)
                atom._key = None
                atom.id = len(_by_id)
                _by_id.append(atom)
                _intern[skey] = atom
        return atom

    def _init(self, *fields):  # pragma: no cover - overridden
        raise NotImplementedError

    def __hash__(self):
        return self.id

    def __eq__(self, other):
        return self is other

    def __lt__(self, other: "Atom"):
        return self.sort_key() < other.sort_key()

    def __reduce__(self):
        return (type(self), self._fields())

    def sort_key(self) -> tuple:
        if self._key is None:
            self._key = self._compute_key()
        return self._key

    @property
    def is_coordinate(self) -> bool:
        return not isinstance(self, FnSym)

    def __repr__(self):
        return render_atom(self)


class IndepVar(Atom):
    __slots__ = ("mu",)
    tag = 0

    def __new__(cls, mu: int):
        return super().__new__(cls, int(mu))

    def _init(self, mu):
        self.mu = mu

    def _fields(self):
        return (self.mu,)

    def _compute_key(self):
        return (0, self.mu)


class JetVar(Atom):
    __slots__ = ("alpha", "index")
    tag = 1

    def __new__(cls, alpha: int, index):
        return super().__new__(cls, int(alpha), mi.as_index(index))

    def _init(self, alpha, index):
        self.alpha = alpha
        self.index = index

    def _fields(self):
        return (self.alpha, self.index)

    def _compute_key(self):
        return (1, self.alpha, self.index)

    @property
    def order(self) -> int:
        return sum(self.index)


class FnSym(Atom):
    """``name^{(derivs)}(args...)``: an opaque function with slot derivatives."""

    __slots__ = ("name", "derivs", "args")
    tag = 2

    def __new__(cls, name: str, derivs: Sequence[int], args: Sequence["Expr"]):
        args = tuple(as_expr(a) for a in args)
        derivs = tuple(int(d) for d in derivs)
        if len(derivs) != len(args):
            raise ValueError(f"{name}: {len(derivs)} slot derivatives for {len(args)} arguments")
        if any(d < 0 for d in derivs):
            raise ValueError(f"{name}: negative slot derivative {derivs}")
        return super().__new__(cls, name, derivs, args)

    def _init(self, name, derivs, args):
        self.name = name
        self.derivs = derivs
        self.args = args

    def _fields(self):
        return (self.name, self.derivs, self.args)

    def _compute_key(self):
        return (2, self.name, self.derivs, tuple(a.sort_key() for a in self.args))

    def bump(self, slot: int) -> "FnSym":
        d = list(self.derivs)
        d[slot] += 1
        return FnSym(self.name, d, self.args)


def atom_by_id(i: int) -> Atom:
    return _by_id[i]


# ---------------------------------------------------------------- polynomials
# Polynomials are plain dicts {monomial: mpq} with no zero coefficients.
# A monomial is a tuple of (atom id, exponent) pairs sorted by atom id.

_Q0 = mpq(0)
_Q1 = mpq(1)


def _mmul(a: Mono, b: Mono) -> Mono:
    if not a:
        return b
    if not b:
        return a
    d = dict(a)
    for k, e in b:
        d[k] = d.get(k, 0) + e
    return tuple(sorted(d.items()))


def p_const(c) -> Poly:
    c = mpq(c)
    return {ONE_MONO: c} if c else {}


def p_add(a: Poly, b: Poly) -> Poly:
    if len(a) < len(b):
        a, b = b, a
    out = dict(a)
    for m, c in b.items():
        v = out.get(m)
        if v is None:
            out[m] = c
        else:
            v = v + c
            if v:
                out[m] = v
            else:
                del out[m]
    return out


def _p_iadd(acc: Poly, b: Poly) -> None:
    for m, c in b.items():
        v = acc.get(m)
        if v is None:
            acc[m] = c
        else:
            v = v + c
            if v:
                acc[m] = v
            else:
                del acc[m]


def p_neg(a: Poly) -> Poly:
    return {m: -c for m, c in a.items()}


def p_sub(a: Poly, b: Poly) -> Poly:
    out = dict(a)
    for m, c in b.items():
        v = out.get(m)
        if v is None:
            out[m] = -c
        else:
            v = v - c
            if v:
                out[m] = v
            else:
                del out[m]
    return out


def p_scale(a: Poly, c) -> Poly:
    c = mpq(c)
    if not c:
        return {}
    if c == 1:
        return a
    return {m: v * c for m, v in a.items()}


def p_mul(a: Poly, b: Poly) -> Poly:
    if not a or not b:
        return {}
    if len(a) < len(b):
        a, b = b, a
    if len(b) == 1:
        (mb, cb), = b.items()
        if not mb:
            return p_scale(a, cb)
        return {_mmul(m, mb): c * cb for m, c in a.items()}
    out: Poly = {}
    get = out.get
    for mb, cb in b.items():
        for ma, ca in a.items():
            m = _mmul(ma, mb)
            out[m] = get(m, _Q0) + ca * cb
    return {m: c for m, c in out.items() if c}


def p_pow(a: Poly, n: int) -> Poly:
    result = {ONE_MONO: _Q1}
    base = a
    while n:
        if n & 1:
            result = p_mul(result, base)
        n >>= 1
        if n:
            base = p_mul(base, base)
    return result


def p_diff(a: Poly, aid: int) -> Poly:
    """Formal partial derivative with respect to the atom with id ``aid``."""
    out: Poly = {}
    for m, c in a.items():
        for pos, (k, e) in enumerate(m):
            if k == aid:
                if e == 1:
                    nm = m[:pos] + m[pos + 1:]
                else:
                    nm = m[:pos] + ((k, e - 1),) + m[pos + 1:]
                out[nm] = out.get(nm, _Q0) + c * e
                break
    return {m: c for m, c in out.items() if c}


def p_atom_ids(a: Poly) -> set:
    return {k for m in a for k, _ in m}


def p_is_const(a: Poly) -> bool:
    return not a or (len(a) == 1 and ONE_MONO in a)


def _mono_key(m: Mono) -> tuple:
    deg = sum(e for _, e in m)
    return (deg, tuple(sorted(((_by_id[k].sort_key(), e) for k, e in m), reverse=True)))


def p_sort_key(a: Poly) -> tuple:
    return tuple(sorted(((_mono_key(m), c) for m, c in a.items()), reverse=True))


def p_leading(a: Poly) -> Tuple[Mono, "mpq"]:
    m = max(a, key=_mono_key)
    return m, a[m]


def p_degree_in(a: Poly, aid: int) -> int:
    best = 0
    for m in a:
        for k, e in m:
            if k == aid and e > best:
                best = e
    return best


# -- gcd via sympy's sparse integer polynomial rings

_ring_cache: Dict[int, object] = {}
_ring_lock = threading.Lock()


def _zz_ring(n: int):
    r = _ring_cache.get(n)
    if r is None:
        from sympy import symbols
        from sympy.polys.domains import ZZ
        from sympy.polys.rings import PolyRing

        with _ring_lock:
            r = _ring_cache.get(n)
            if r is None:
                gens = symbols(f"g0:{n}") if n > 1 else (symbols("g0"),)
                r = PolyRing(gens, ZZ, "lex")
                _ring_cache[n] = r
    return r


def _to_zz(a: Poly, pos: Dict[int, int], n: int):
    den = mpz(1)
    for c in a.values():
        q = c.denominator
        if q != 1:
            den = den * q // _gcd_int(den, q)
    out = {}
    for m, c in a.items():
        exps = [0] * n
        for k, e in m:
            exps[pos[k]] = e
        out[tuple(exps)] = mpz(c * den)
    return out


def _gcd_int(a, b):
    import gmpy2

    return gmpy2.gcd(a, b)


def _from_zz(d, ids: Sequence[int]) -> Poly:
    out: Poly = {}
    for exps, c in d.items():
        m = tuple((ids[p], e) for p, e in enumerate(exps) if e)
        # ids are sorted, so m is sorted by atom id
        out[m] = mpq(int(c))
    return out


def p_cofactors(a: Poly, b: Poly) -> Tuple[Poly, Poly, Poly]:
    """Return ``(g, a/g, b/g)`` with ``g = gcd(a, b)`` up to rational scalars.

    The three results are only defined up to a common rational rescaling of
    the cofactors; callers always renormalize afterwards.
    """
    ids = sorted(p_atom_ids(a) | p_atom_ids(b))
    if not ids:
        return {ONE_MONO: _Q1}, a, b
    common = p_atom_ids(a) & p_atom_ids(b)
    if not common:
        return {ONE_MONO: _Q1}, a, b
    n = len(ids)
    pos = {k: i for i, k in enumerate(ids)}
    R = _zz_ring(n)
    A = R.from_dict(_to_zz(a, pos, n))
    B = R.from_dict(_to_zz(b, pos, n))
    g, ca, cb = A.cofactors(B)
    if g.is_ground:
        return {ONE_MONO: _Q1}, a, b
    # a = la * A and b = lb * B for rationals la, lb; rescale cofactors so that
    # a/b == ca'/cb' exactly.
    pa, pb = _from_zz(ca, ids), _from_zz(cb, ids)
    la = _ratio(a, A, ids, pos)
    lb = _ratio(b, B, ids, pos)
    return _from_zz(g, ids), p_scale(pa, la), p_scale(pb, lb)


def _ratio(a: Poly, A, ids, pos) -> "mpq":
    # a == ratio * A; compare one coefficient.
    m, c = next(iter(a.items()))
    exps = [0] * len(ids)
    for k, e in m:
        exps[pos[k]] = e
    return c / mpq(int(A[tuple(exps)]))


# ---------------------------------------------------------------- expressions


class Expr:
    """Canonical reduced fraction of sparse rational polynomials in atoms."""

    __slots__ = ("num", "den", "_hash", "_key")

    def __init__(self, num: Poly, den: Optional[Poly] = None, _reduced: bool = False):
        if den is None or _reduced:
            self.num = num
            self.den = den if den is not None else {ONE_MONO: _Q1}
        else:
            self.num, self.den = _reduce(num, den)
        self._hash = None
        self._key = None

    # -- construction helpers
    @staticmethod
    def const(c) -> "Expr":
        return Expr(p_const(c))

    @staticmethod
    def atom(a: Atom) -> "Expr":
        return Expr({((a.id, 1),): _Q1})

    # -- predicates and accessors
    def is_zero(self) -> bool:
        return not self.num

    def is_polynomial(self) -> bool:
        return p_is_const(self.den)

    def is_constant(self) -> bool:
        return p_is_const(self.num) and p_is_const(self.den)

    def constant_value(self) -> "mpq":
        if not self.is_constant():
            raise ValueError(f"{self} is not a constant")
        return self.num.get(ONE_MONO, _Q0)

    def atoms(self) -> set:
        """Top-level atoms of numerator and denominator."""
        return {_by_id[k] for k in p_atom_ids(self.num) | p_atom_ids(self.den)}

    def coordinates(self) -> set:
        """All coordinate atoms, including those inside opaque-function arguments."""
        out = set()
        stack = [self]
        while stack:
            e = stack.pop()
            for a in e.atoms():
                if isinstance(a, FnSym):
                    stack.extend(a.args)
                else:
                    out.add(a)
        return out

    def fn_atoms(self) -> set:
        """All opaque-function atoms, nested ones included."""
        out = set()
        stack = [self]
        while stack:
            e = stack.pop()
            for a in e.atoms():
                if isinstance(a, FnSym):
                    out.add(a)
                    stack.extend(a.args)
        return out

    def jet_order(self, alpha: Optional[int] = None) -> int:
        """Maximal |i| over jet coordinates present (``-1`` if none)."""
        best = -1
        for a in self.coordinates():
            if isinstance(a, JetVar) and (alpha is None or a.alpha == alpha):
                best = max(best, a.order)
        return best

    def sort_key(self) -> tuple:
        if self._key is None:
            self._key = (p_sort_key(self.num), p_sort_key(self.den))
        return self._key

    # -- dunder protocol
    def __hash__(self):
        if self._hash is None:
            self._hash = hash((frozenset(self.num.items()), frozenset(self.den.items())))
        return self._hash

    def __eq__(self, other):
        if isinstance(other, (int, mpq)) or _is_fraction(other):
            other = Expr.const(other)
        if not isinstance(other, Expr):
            return NotImplemented
        return self.num == other.num and self.den == other.den

    def __bool__(self):
        return bool(self.num)

    def __repr__(self):
        return f"Expr({render(self)!r})"

    def __str__(self):
        return render(self)

    def __neg__(self):
        return Expr(p_neg(self.num), self.den, _reduced=True)

    def __pos__(self):
        return self

    def __add__(self, other):
        other = _coerce(other)
        if other is None:
            return NotImplemented
        return _add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        other = _coerce(other)
        if other is None:
            return NotImplemented
        return _add(self, -other)

    def __rsub__(self, other):
        other = _coerce(other)
        if other is None:
            return NotImplemented
        return _add(other, -self)

    def __mul__(self, other):
        other = _coerce(other)
        if other is None:
            return NotImplemented
        return _mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = _coerce(other)
        if other is None:
            return NotImplemented
        return _mul(self, other.inverse())

    def __rtruediv__(self, other):
        other = _coerce(other)
        if other is None:
            return NotImplemented
        return _mul(other, self.inverse())

    def __pow__(self, n):
        return pow_(self, n)

    def inverse(self) -> "Expr":
        if not self.num:
            raise DivisionByZero("division by zero expression")
        return Expr(*_monic(self.den, self.num), _reduced=True)


def _is_fraction(v) -> bool:
    from fractions import Fraction

    return isinstance(v, Fraction)


def _coerce(v) -> Optional[Expr]:
    if isinstance(v, Expr):
        return v
    if isinstance(v, (int, mpq)) or _is_fraction(v):
        return Expr.const(v)
    if isinstance(v, Atom):
        return Expr.atom(v)
    return None


def as_expr(v) -> Expr:
    e = _coerce(v)
    if e is None:
        raise TypeError(f"cannot interpret {v!r} as an expression")
    return e


def _monic(num: Poly, den: Poly) -> Tuple[Poly, Poly]:
    if not den:
        raise DivisionByZero("zero denominator")
    if len(den) == 1:
        (m, c), = den.items()
        if c == 1:
            return num, den
        inv = 1 / c
        return p_scale(num, inv), {m: _Q1}
    _, lc = p_leading(den)
    if lc == 1:
        return num, den
    inv = 1 / lc
    return p_scale(num, inv), p_scale(den, inv)


def _reduce(num: Poly, den: Poly) -> Tuple[Poly, Poly]:
    if not den:
        raise DivisionByZero("zero denominator")
    if not num:
        return {}, {ONE_MONO: _Q1}
    if p_is_const(den):
        c = den[ONE_MONO]
        return p_scale(num, 1 / c), {ONE_MONO: _Q1}
    if not p_is_const(num):
        _, num, den = p_cofactors(num, den)
        if p_is_const(den):
            c = den[ONE_MONO]
            return p_scale(num, 1 / c), {ONE_MONO: _Q1}
    return _monic(num, den)


def _add(a: Expr, b: Expr) -> Expr:
    if not a.num:
        return b
    if not b.num:
        return a
    ad, bd = a.den, b.den
    if p_is_const(ad) and p_is_const(bd):
        return Expr(p_add(a.num, b.num))
    if p_is_const(bd):
        return Expr(p_add(a.num, p_mul(b.num, ad)), ad, _reduced=True)
    if p_is_const(ad):
        return Expr(p_add(p_mul(a.num, bd), b.num), bd, _reduced=True)
    if ad == bd:
        num = p_add(a.num, b.num)
        return Expr(num, ad)
    g, ad1, bd1 = p_cofactors(ad, bd)
    num = p_add(p_mul(a.num, bd1), p_mul(b.num, ad1))
    if not num:
        return Expr({})
    if p_is_const(g):
        return Expr(*_monic(num, p_mul(ad, bd1)), _reduced=True)
    _, num, g1 = p_cofactors(num, g)
    return Expr(*_monic(num, p_mul(p_mul(ad1, bd1), g1)), _reduced=True)


def _mul(a: Expr, b: Expr) -> Expr:
    if not a.num or not b.num:
        return Expr({})
    ad, bd = a.den, b.den
    an, bn = a.num, b.num
    if p_is_const(ad) and p_is_const(bd):
        return Expr(p_mul(an, bn))
    if not p_is_const(bd):
        _, an, bd = p_cofactors(an, bd)
    if not p_is_const(ad):
        _, bn, ad = p_cofactors(bn, ad)
    return Expr(*_monic(p_mul(an, bn), p_mul(ad, bd)), _reduced=True)


def pow_(a: Expr, n: int) -> Expr:
    n = int(n)
    if n == 0:
        if not a.num:
            raise DivisionByZero("0**0 is undefined")
        return Expr.const(1)
    if n < 0:
        return pow_(a.inverse(), -n)
    if n == 1:
        return a
    return Expr(*_monic(p_pow(a.num, n), p_pow(a.den, n)), _reduced=True)


# ---------------------------------------------------------------- constructors

ZERO = Expr({})
ONE = Expr.const(1)


def const(c) -> Expr:
    return Expr.const(c)


def x(mu: int = 0) -> Expr:
    return Expr.atom(IndepVar(mu))


def u(index=0, alpha: int = 0) -> Expr:
    """Jet coordinate ``u^alpha_index`` (int index is the m=1 shorthand)."""
    return Expr.atom(JetVar(alpha, index))


def fn(name: str, *args, derivs: Optional[Sequence[int]] = None) -> Expr:
    """Opaque function ``name(args)``, optionally with slot derivative counts."""
    if derivs is None:
        derivs = (0,) * len(args)
    return Expr.atom(FnSym(name, derivs, args))


def is_zero(e: Expr) -> bool:
    return e.is_zero()


# ---------------------------------------------------------------- derivations


def _poly_derive(p: Poly, datom: Callable[[Atom], Expr]) -> Expr:
    """Apply the derivation defined on atoms by ``datom`` to a polynomial."""
    dvals: Dict[int, Expr] = {}
    parts: Dict[int, Poly] = {}
    for m, c in p.items():
        for pos, (k, e) in enumerate(m):
            da = dvals.get(k)
            if da is None:
                da = dvals[k] = datom(_by_id[k])
            if not da.num:
                continue
            nm = m[:pos] + m[pos + 1:] if e == 1 else m[:pos] + ((k, e - 1),) + m[pos + 1:]
            part = parts.get(k)
            if part is None:
                part = parts[k] = {}
            part[nm] = part.get(nm, _Q0) + c * e
    acc_poly: Poly = {}
    acc_rat: Optional[Expr] = None
    for k, part in parts.items():
        da = dvals[k]
        part = {m: c for m, c in part.items() if c}
        if p_is_const(da.den):
            _p_iadd(acc_poly, p_mul(part, da.num))
        else:
            term = _mul(Expr(part), da)
            acc_rat = term if acc_rat is None else _add(acc_rat, term)
    out = Expr(acc_poly)
    if acc_rat is not None:
        out = _add(out, acc_rat)
    return out


def derive(e: Expr, datom: Callable[[Atom], Expr]) -> Expr:
    """Apply a derivation, given by its values on atoms, to ``e`` (quotient rule)."""
    if not e.num:
        return e
    dn = _poly_derive(e.num, datom)
    if p_is_const(e.den):
        return dn
    dd = _poly_derive(e.den, datom)
    if not dd.num:
        return _mul(dn, Expr(e.den).inverse())
    den_e = Expr(e.den, _reduced=True)
    # (n/d)' = n'/d - n d'/d^2
    first = _mul(dn, den_e.inverse())
    second = _mul(_mul(Expr(e.num, e.den, _reduced=True), dd), den_e.inverse())
    return _add(first, -second)


def chain_rule(atom: FnSym, darg: Callable[[Expr], Expr]) -> Expr:
    """Derivative of an opaque-function atom given the derivative of each argument."""
    out = ZERO
    for slot, arg in enumerate(atom.args):
        da = darg(arg)
        if da.num:
            out = out + Expr.atom(atom.bump(slot)) * da
    return out


_partial_cache: Dict[Tuple[int, int], Expr] = {}


def _partial_atom(b: Atom, a: Atom) -> Expr:
    if b is a:
        return ONE
    if not isinstance(b, FnSym):
        return ZERO
    key = (b.id, a.id)
    hit = _partial_cache.get(key)
    if hit is None:
        hit = chain_rule(b, lambda arg: partial(arg, a))
        _partial_cache[key] = hit
    return hit


def partial(e: Expr, a: Atom) -> Expr:
    """Partial derivative with respect to a coordinate atom (chain rule through FnSym)."""
    if isinstance(a, Expr):
        atoms = a.atoms()
        if len(atoms) != 1 or a != Expr.atom(next(iter(atoms))):
            raise InvalidAtom(f"{a} is not a single atom")
        a = next(iter(atoms))
    if not isinstance(a, Atom) or isinstance(a, FnSym):
        raise InvalidAtom(f"cannot differentiate with respect to {a!r}")
    if a not in e.coordinates():
        return ZERO
    return derive(e, lambda b: _partial_atom(b, a))


# ---------------------------------------------------------------- substitution


def _function_binding(key: FnSym):
    """Parameters of a function-level binding, or None for a structural one."""
    if any(key.derivs):
        return None
    params = []
    for arg in key.args:
        atoms = arg.atoms()
        if len(atoms) != 1:
            return None
        a = next(iter(atoms))
        if isinstance(a, FnSym) or arg != Expr.atom(a):
            return None
        params.append(a)
    if len(set(params)) != len(params):
        return None
    return tuple(params)


def _eval_poly(p: Poly, image: Callable[[Atom], Expr]) -> Expr:
    imgs = {aid: image(_by_id[aid]) for aid in p_atom_ids(p)}
    if all(p_is_const(v.den) for v in imgs.values()):
        out: Poly = {}
        powcache: Dict[Tuple[int, int], Poly] = {}
        for m, c in p.items():
            t: Poly = {ONE_MONO: c}
            for k, e in m:
                pw = powcache.get((k, e))
                if pw is None:
                    pw = p_pow(imgs[k].num, e)
                    powcache[(k, e)] = pw
                t = p_mul(t, pw)
            _p_iadd(out, t)
        return Expr(out)
    acc = ZERO
    for m, c in p.items():
        t = Expr.const(c)
        for k, e in m:
            t = t * pow_(imgs[k], e)
        acc = acc + t
    return acc


def substitute(e: Expr, bindings: Mapping) -> Expr:
    """Simultaneous substitution of atoms by expressions, then renormalization.

    Keys are atoms (or single-atom Exprs).  A key that is an opaque function
    applied to distinct coordinates, e.g. ``phi(u_0, u_1)``, binds the
    function itself: every occurrence ``phi{d}(a, b)`` becomes the matching
    partial derivative of the bound value, evaluated at ``(a, b)``.
    """
    table: Dict[Atom, Expr] = {}
    funcs: Dict[str, Tuple[int, tuple, Expr]] = {}
    for k, v in bindings.items():
        if isinstance(k, Expr):
            atoms = k.atoms()
            if len(atoms) != 1 or k != Expr.atom(next(iter(atoms))):
                raise InvalidAtom(f"binding key {k} is not a single atom")
            k = next(iter(atoms))
        v = as_expr(v)
        table[k] = v
        if isinstance(k, FnSym):
            params = _function_binding(k)
            if params is not None:
                funcs[k.name] = (len(k.args), params, v)
    memo: Dict[Atom, Expr] = {}

    def image(a: Atom) -> Expr:
        hit = memo.get(a)
        if hit is not None:
            return hit
        if a in table:
            out = table[a]
        elif isinstance(a, FnSym):
            new_args = tuple(substitute(arg, bindings) for arg in a.args)
            binding = funcs.get(a.name)
            if binding is not None and binding[0] == len(a.args):
                _, params, body = binding
                for p, d in zip(params, a.derivs):
                    for _ in range(d):
                        body = partial(body, p)
                out = _subst_simple(body, dict(zip(params, new_args)))
            elif new_args == a.args:
                out = Expr.atom(a)
            else:
                out = Expr.atom(FnSym(a.name, a.derivs, new_args))
        else:
            out = Expr.atom(a)
        memo[a] = out
        return out

    num = _eval_poly(e.num, image)
    if p_is_const(e.den):
        return num
    den = _eval_poly(e.den, image)
    if den.is_zero():
        raise DivisionByZero(f"denominator of {e} vanishes after substitution")
    return num / den


def _subst_simple(e: Expr, table: Dict[Atom, Expr]) -> Expr:
    """Structural simultaneous substitution (no function-level bindings)."""
    memo: Dict[Atom, Expr] = {}

    def image(a: Atom) -> Expr:
        hit = memo.get(a)
        if hit is None:
            if a in table:
                hit = table[a]
            elif isinstance(a, FnSym):
                args = tuple(_subst_simple(arg, table) for arg in a.args)
                hit = Expr.atom(FnSym(a.name, a.derivs, args))
            else:
                hit = Expr.atom(a)
            memo[a] = hit
        return hit

    num = _eval_poly(e.num, image)
    den = _eval_poly(e.den, image)
    if den.is_zero():
        raise DivisionByZero(f"denominator of {e} vanishes after substitution")
    return num / den


def coefficient(e: Expr, a: Atom, k: int) -> Expr:
    """Coefficient of ``a**k`` in a polynomial-in-``a`` expression (``a`` top-level)."""
    if a.id in p_atom_ids(e.den):
        raise ValueError(f"{a} occurs in the denominator of {e}")
    out: Poly = {}
    for m, c in e.num.items():
        e_a = 0
        rest = []
        for kk, ee in m:
            if kk == a.id:
                e_a = ee
            else:
                rest.append((kk, ee))
        if e_a == k:
            out[tuple(rest)] = c
    return Expr(out, e.den)


# ---------------------------------------------------------------- rendering


def _fmt_q(c) -> str:
    c = mpq(c)
    if c.denominator == 1:
        return str(c.numerator)
    return f"{c.numerator}/{c.denominator}"


def render_atom(a: Atom, m: Optional[int] = None, n_dep: int = 1, names: Optional[Sequence[str]] = None) -> str:
    if isinstance(a, IndepVar):
        if (m or 1) == 1 and a.mu == 0:
            return "x"
        return f"x{a.mu + 1}"
    if isinstance(a, JetVar):
        if names and a.alpha < len(names):
            dep = names[a.alpha]
        else:
            dep = "u" if (n_dep == 1 and a.alpha == 0) else f"u{a.alpha + 1}"
        if len(a.index) == 1:
            return f"{dep}_{a.index[0]}"
        return f"{dep}_({','.join(map(str, a.index))})"
    head = a.name
    if any(a.derivs):
        head += "{" + ",".join(map(str, a.derivs)) + "}"
    return head + "(" + ",".join(render(arg, m, n_dep, names) for arg in a.args) + ")"


def _render_poly(p: Poly, m, n_dep, names=None) -> Tuple[str, int]:
    if not p:
        return "0", 1
    terms = sorted(p.items(), key=lambda t: _mono_key(t[0]), reverse=True)
    parts = []
    for mono, c in terms:
        factors = []
        for k, e in sorted(mono, key=lambda t: _by_id[t[0]].sort_key()):
            s = render_atom(_by_id[k], m, n_dep, names)
            factors.append(s if e == 1 else f"{s}^{e}")
        neg = c < 0
        ac = -c if neg else c
        if factors and ac == 1:
            body = "*".join(factors)
        else:
            body = "*".join([_fmt_q(ac)] + factors)
        parts.append((neg, body))
    out = ("-" if parts[0][0] else "") + parts[0][1]
    for neg, body in parts[1:]:
        out += (" - " if neg else " + ") + body
    return out, len(parts)


def _infer_m(e: Expr) -> int:
    for a in e.coordinates():
        if isinstance(a, JetVar):
            return len(a.index)
    mus = [a.mu for a in e.coordinates() if isinstance(a, IndepVar)]
    return max(mus) + 1 if mus else 1


def render(e: Expr, m: Optional[int] = None, n_dep: int = 1, names: Optional[Sequence[str]] = None) -> str:
    """Deterministic plain-text form, parseable back by :mod:`hamcheck.parser`.

    ``names`` optionally gives the dependent-variable names to print.
    """
    if m is None:
        m = _infer_m(e)
    num, nterms = _render_poly(e.num, m, n_dep, names)
    if p_is_const(e.den):
        return num
    den, _ = _render_poly(e.den, m, n_dep, names)
    if nterms > 1:
        num = f"({num})"
    return f"{num}/({den})"

"""Total derivatives, variational derivatives and evolutionary fields on jets.

Jet families (finitely supported maps over jet coordinates) are plain dicts:

* ``{(alpha, i): Expr}`` for elements of F_A (e.g. a jet gradient);
* ``{(mu, alpha, i): Expr}`` for families carrying an extra horizontal index
  (images of :func:`nabla`, arguments of :func:`nabla_star`).

Zero entries are always dropped.  A characteristic is a sequence of Exprs,
one per dependent variable.
"""
from __future__ import annotations

import threading
from typing import Dict, Mapping, Sequence, Tuple

from . import multiindex as mi
from .algebra import (
    ONE,
    ZERO,
    Atom,
    Expr,
    IndepVar,
    JetVar,
    as_expr,
    chain_rule,
    derive,
    partial,
)

JetFamily = Dict[Tuple[int, mi.MultiIndex], Expr]
MuJetFamily = Dict[Tuple[int, int, mi.MultiIndex], Expr]

_dcache: Dict[Tuple[int, int], Expr] = {}
_dlock = threading.Lock()


def _total_atom(a: Atom, mu: int) -> Expr:
    if isinstance(a, IndepVar):
        return ONE if a.mu == mu else ZERO
    if isinstance(a, JetVar):
        idx = list(a.index)
        if mu >= len(idx):
            raise ValueError(f"D_{mu} undefined on {a} (m={len(idx)})")
        idx[mu] += 1
        return Expr.atom(JetVar(a.alpha, tuple(idx)))
    key = (a.id, mu)
    hit = _dcache.get(key)
    if hit is None:
        hit = chain_rule(a, lambda arg: total_derivative(arg, mu))
        with _dlock:
            _dcache[key] = hit
    return hit


def total_derivative(e, mu: int = 0) -> Expr:
    """D_mu = d/dx^mu + u^alpha_{i+(mu)} d/du^alpha_i (chain rule through opaque symbols)."""
    e = as_expr(e)
    return derive(e, lambda a: _total_atom(a, mu))


def total_derivative_pow(e, i) -> Expr:
    """D^i for a multi-index ``i`` (int allowed for m=1)."""
    e = as_expr(e)
    for mu, k in enumerate(mi.as_index(i)):
        for _ in range(k):
            e = total_derivative(e, mu)
    return e


def jet_gradient(e) -> JetFamily:
    """The vertical gradient {(alpha, i): d e / d u^alpha_i}."""
    e = as_expr(e)
    out: JetFamily = {}
    for a in sorted(e.coordinates()):
        if isinstance(a, JetVar):
            d = partial(e, a)
            if d:
                out[(a.alpha, a.index)] = d
    return out


def euler(e, alpha: int = 0) -> Expr:
    """Variational derivative: sum over i of (-D)^i d e / d u^alpha_i."""
    out = ZERO
    for (al, i), d in jet_gradient(e).items():
        if al != alpha:
            continue
        term = total_derivative_pow(d, i)
        out = out - term if mi.order(i) % 2 else out + term
    return out


def divergence(psi: Sequence) -> Expr:
    """Div psi = sum_mu D_mu psi^mu."""
    out = ZERO
    for mu, comp in enumerate(psi):
        out = out + total_derivative(comp, mu)
    return out


def prolong(phi, i) -> Expr:
    """D^i phi (one component of the jet prolongation)."""
    return total_derivative_pow(phi, i)


def ev(phi: Sequence, e) -> Expr:
    """Evolutionary derivation with characteristic ``phi`` applied to ``e``.

    ev_phi = sum over jet coordinates u^alpha_i of (D^i phi^alpha) d/du^alpha_i;
    prolongations are computed lazily for the coordinates actually present.
    """
    e = as_expr(e)
    phi = [as_expr(p) for p in phi]
    cache: Dict[Atom, Expr] = {}

    def datom(a: Atom) -> Expr:
        hit = cache.get(a)
        if hit is not None:
            return hit
        if isinstance(a, IndepVar):
            out = ZERO
        elif isinstance(a, JetVar):
            if a.alpha >= len(phi):
                raise ValueError(f"characteristic has no component for {a}")
            out = total_derivative_pow(phi[a.alpha], a.index)
        else:
            out = chain_rule(a, lambda arg: derive(arg, datom))
        cache[a] = out
        return out

    return derive(e, datom)


def characteristic_bracket(phi: Sequence, psi: Sequence) -> Tuple[Expr, ...]:
    """[phi, psi]^alpha = ev_phi psi^alpha - ev_psi phi^alpha."""
    return tuple(ev(phi, b) - ev(psi, a) for a, b in zip(phi, psi))


def nabla(phi: Mapping, m: int | None = None) -> MuJetFamily:
    """eta^alpha_{mu i} = D_mu phi^alpha_i - phi^alpha_{i+(mu)} on a finite family."""
    phi = {k: as_expr(v) for k, v in phi.items() if as_expr(v)}
    if not phi:
        return {}
    if m is None:
        m = len(next(iter(phi))[1])
    targets = set()
    for alpha, i in phi:
        for mu in range(m):
            targets.add((mu, alpha, i))
            lower = mi.sub(i, mi.unit(mu, m))
            if lower is not None:
                targets.add((mu, alpha, lower))
    out: MuJetFamily = {}
    for mu, alpha, i in sorted(targets):
        val = ZERO
        if (alpha, i) in phi:
            val = total_derivative(phi[(alpha, i)], mu)
        up = (alpha, mi.add(i, mi.unit(mu, m)))
        if up in phi:
            val = val - phi[up]
        if val:
            out[(mu, alpha, i)] = val
    return out


def nabla_star(chi: Mapping) -> JetFamily:
    """Lagrange dual of nabla on jets: f_{alpha,i} = -D_mu chi^mu_{alpha,i} - chi^mu_{alpha,i-(mu)}."""
    chi = {k: as_expr(v) for k, v in chi.items() if as_expr(v)}
    out: JetFamily = {}
    for (mu, alpha, i), val in chi.items():
        m = len(i)
        key = (alpha, i)
        out[key] = out.get(key, ZERO) - total_derivative(val, mu)
        up = (alpha, mi.add(i, mi.unit(mu, m)))
        out[up] = out.get(up, ZERO) - val
    return {k: v for k, v in sorted(out.items()) if v}


def prolongation_family(phi: Sequence, max_order: int, m: int = 1) -> JetFamily:
    """The truncated prolongation {(alpha, i): D^i phi^alpha : |i| <= max_order}."""
    out: JetFamily = {}
    for alpha, comp in enumerate(phi):
        for i in mi.box((max_order,) * m):
            if mi.order(i) <= max_order:
                v = total_derivative_pow(comp, i)
                if v:
                    out[(alpha, i)] = v
    return out


def adjoint_prolongation(f: Mapping) -> Dict[int, Expr]:
    """J* f: alpha -> sum_i (-D)^i f_{alpha, i}."""
    out: Dict[int, Expr] = {}
    for (alpha, i), val in f.items():
        term = total_derivative_pow(val, i)
        if mi.order(i) % 2:
            term = -term
        out[alpha] = out.get(alpha, ZERO) + term
    return {k: v for k, v in out.items() if v}

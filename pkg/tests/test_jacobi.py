import threading

import pytest

from gen import SEEDS, jets, rand_fn_expr, rand_nonconst_poly, rand_op, rand_poly, rng_for
from hamcheck import multiindex as mi
from hamcheck.algebra import ZERO, JetVar, const, fn, partial, u
from hamcheck.calculus import euler, total_derivative, total_derivative_pow
from hamcheck.jacobi import (
    bracket_density,
    ScatterLimitExceeded,
    first_order_lambda,
    first_order_operator,
    is_hamiltonian,
    lemma2_density,
    q_density,
    q_tensor,
    q_tensor_firstorder,
    q_tensor_parts,
    r_tensor,
    r_tensor_firstorder,
    supports,
)
from hamcheck.operators import DiffOp, NotSkewAdjoint, Unsupported, adjoint

u0, u1, u2, u3 = (u(i) for i in range(4))
D = DiffOp.D()
half = const(1) / 2


def J(i):
    return JetVar(0, (i,))


def opaque(n):
    return fn("lam", *(u(i) for i in range(n + 1)))


def rand_lambda(rng):
    """Random first-order coefficient in u_0, u_1, u_2: polynomial, or polynomial plus an opaque term."""
    p = rand_nonconst_poly(rng, jets(2), 3, 3)
    if rng.random() < 0.3:
        p = p + rand_fn_expr(rng, jets(1)) * rng.choice(jets(2))
    return p


def rand_skew(rng, rows=1, order=2):
    P = rand_op(rng, order=order, rows=rows, degree=1)
    return P - adjoint(P)


class TestRTensor:
    def test_examples(self):
        lam = opaque(2)
        R = r_tensor(first_order_operator(lam))
        l1, l2 = partial(lam, J(1)), partial(lam, J(2))
        assert R[3, 1] == lam * l2
        assert R[2, 1] == lam * l1 + const(5) / 2 * total_derivative(lam) * l2
        assert r_tensor(DiffOp.D(power=3)).is_zero

    def test_support_inside_region(self):
        lam = opaque(2)
        op = first_order_operator(lam)
        sup = set(supports(op).R)
        assert set((k[0], l[0]) for k, l in r_tensor(op).index_pairs()) <= sup


@pytest.mark.parametrize("seed", SEEDS)
def test_closed_forms_for_r(seed):
    lam = rand_lambda(rng_for(seed, 30))
    R = r_tensor(first_order_operator(lam))
    assert R == r_tensor_firstorder(lam)
    n = lam.jet_order()
    for k in range(n + 3):
        expect = ZERO
        for i in range(max(k - 1, 0), n + 1):
            expect = expect + total_derivative_pow(lam, i + 1 - k) * partial(lam, J(i)) * mi.binom_primed(i, k) / 2
        assert R[k, 1] == expect
        assert R[k, 0] == (total_derivative(R[k, 1]) + R[k - 1, 1]) / 2


def test_r_recurrence_opaque():
    lam = opaque(2)
    R = r_tensor(first_order_operator(lam))
    for k in range(0, 5):
        assert R[k, 0] == (total_derivative(R[k, 1]) + R[k - 1, 1]) / 2


@pytest.mark.parametrize("seed", SEEDS)
def test_first_scatter_part(seed):
    lam = rand_lambda(rng_for(seed, 31))
    n = lam.jet_order()
    R, Qp, _ = q_tensor_parts(first_order_operator(lam))
    for k in (0, 1):
        for l in range(n + 3):
            assert Qp[k, l] == -R[l, k]


@pytest.mark.parametrize("seed", SEEDS)
def test_second_scatter_part(seed):
    lam = rand_lambda(rng_for(seed, 32))
    n = lam.jet_order()
    R, _, Qpp = q_tensor_parts(first_order_operator(lam))
    for k in range(n + 3):
        for l in range(n + 3):
            expect = ZERO
            for i in range(n + 2):
                p = i + 1 - k - l
                if p >= 0:
                    c = mi.trinom_primed(i, p, k, l) * (-1) ** i
                    expect = expect + total_derivative_pow(R[i, 1], p) * c / 2
            assert Qpp[k, l] == expect
            assert Qpp[k, l] == -Qpp[l, k]


@pytest.mark.parametrize("seed", SEEDS)
def test_q_assembly_and_antisymmetry(seed):
    lam = rand_lambda(rng_for(seed, 33))
    R, _, Qpp = q_tensor_parts(first_order_operator(lam))
    Q = q_tensor(first_order_operator(lam))
    keys = {(k[0], l[0]) for k, l in Q.index_pairs() + R.index_pairs() + Qpp.index_pairs()}
    for k, l in keys:
        assert Q[k, l] == R[k, l] - R[l, k] + Qpp[k, l]
        assert Q[k, l] == -Q[l, k]


@pytest.mark.parametrize("seed", SEEDS)
def test_fast_path_matches_general(seed):
    lam = rand_lambda(rng_for(seed, 34))
    assert q_tensor_firstorder(lam) == q_tensor(first_order_operator(lam))


@pytest.mark.parametrize("seed", SEEDS)
def test_r_form_density_scalar(seed):
    rng = rng_for(seed, 35)
    op = first_order_operator(rand_lambda(rng))
    g = rand_poly(rng, jets(2), 3, 2)
    h = rand_poly(rng, jets(1), 2, 2) + rand_fn_expr(rng, jets(1))
    assert lemma2_density(op, g, h) == q_density(q_tensor(op), g, h)


@pytest.mark.parametrize("seed", SEEDS)
def test_r_form_density_general(seed):
    rng = rng_for(seed, 36)
    rows = 1 + seed % 2
    op = rand_skew(rng, rows, order=2 + seed % 2)
    g = [rand_poly(rng, jets(1, rows), 2, 2) for _ in range(rows)]
    h = [rand_poly(rng, jets(1, rows), 2, 2) for _ in range(rows)]
    assert lemma2_density(op, g, h) == q_density(q_tensor(op), g, h)


@pytest.fixture(scope="module")
def data():
    lam = opaque(2)
    return lam, q_tensor(first_order_operator(lam))


class TestDerivedChain:
    def test_chain(self, data):
        lam, Q = data
        Q03 = Q[0, 3]
        assert Q[0, 4] == ZERO and Q[1, 3] == ZERO
        assert Q[1, 2] == const(3) / 2 * Q03
        assert Q[0, 2] == const(3) / 2 * total_derivative(Q03)
        assert Q[0, 1] == half * total_derivative_pow(Q03, 2)
        l1, l2 = partial(lam, J(1)), partial(lam, J(2))
        Dl = total_derivative(lam)
        assert Q03 == lam * total_derivative(l2) - const(3) / 2 * Dl * l2 - lam * l1

    def test_no_other_entries(self, data):
        _, Q = data
        pairs = {(k[0], l[0]) for k, l in Q.index_pairs()}
        assert pairs == {(0, 1), (0, 2), (0, 3), (1, 0), (1, 2), (2, 0), (2, 1), (3, 0)}

    def test_top_coefficient_in_u3(self, data):
        lam, Q = data
        l2 = partial(lam, J(2))
        assert partial(Q[0, 3], J(3)) == lam * partial(l2, J(2)) - const(3) / 2 * l2 ** 2
        assert partial(Q[0, 3], J(4)) == ZERO

    def test_fast_path_agrees(self, data):
        lam, Q = data
        assert q_tensor_firstorder(lam) == Q


def test_q_generic_bound_example():
    lam = opaque(3)
    Q = q_tensor_firstorder(lam)
    assert Q[1, 4] == -const(5) / 2 * lam * partial(lam, J(3))


def test_reduction_identity():
    phi, psi = fn("phi", u0, u1), fn("psi", u0, u1)
    base = phi * u2 + psi
    Q = q_tensor_firstorder(base ** -2)
    expect = 2 * base ** -5 * (partial(psi, J(1)) - partial(phi, J(0)) * u1)
    assert Q[0, 3] == expect


class TestQExamples:
    def test_counterexample(self):
        assert q_tensor(first_order_operator(u1))[0, 3] == -u1

    def test_constant_coefficients(self):
        assert q_tensor(D).is_zero
        assert q_tensor_firstorder(const(3) / 7).is_zero

    def test_refuses_non_skew(self):
        with pytest.raises(NotSkewAdjoint) as info:
            q_tensor(DiffOp.mult(u0) @ D)
        assert info.value.defect == DiffOp.mult(-u1)

    def test_max_order_cap(self):
        op = first_order_operator(opaque(2))
        with pytest.raises(ScatterLimitExceeded):
            q_tensor(op, max_order=1)
        assert q_tensor(op, max_order=10) == q_tensor(op)

    def test_two_components(self):
        P = DiffOp.from_blocks([[DiffOp.zero(), D], [D, DiffOp.zero()]])
        assert q_tensor(P).is_zero
        A = DiffOp({(0, 0, 1): u(0, 1)}, 2, 2)
        with pytest.raises(NotSkewAdjoint):
            q_tensor(A)

    def test_concurrent_calls_agree(self):
        op = first_order_operator(opaque(2))
        expect = q_tensor(op)
        out = []
        threads = [threading.Thread(target=lambda: out.append(q_tensor(op))) for _ in range(4)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert all(q == expect for q in out)


class TestSupports:
    def test_first_order(self):
        sup = supports(first_order_operator(opaque(2)))
        expect = [(k, 0) for k in range(5)] + [(k, 1) for k in range(4)]
        assert sup.R == sorted(expect)
        Q = q_tensor(first_order_operator(opaque(2)))
        pairs = {(k[0], l[0]) for k, l in Q.index_pairs()}
        assert pairs <= set(sup.Q)

    def test_multiplication(self):
        sup = supports(DiffOp.mult(u2 * u0))
        assert sup.R == [(0, 0), (1, 0), (2, 0)]

    def test_constant(self):
        sup = supports(DiffOp.D(power=3))
        assert sup.R == sup.Q_prime == sup.Q_double_prime == []

    def test_regions(self):
        sup = supports(first_order_operator(u1))
        for i, j in sup.R:
            assert (j, i) in sup.Q_prime and (j, i) in sup.Q_double_prime

    def test_unsupported(self):
        with pytest.raises(Unsupported):
            supports(DiffOp.D(0, m=2))
        with pytest.raises(Unsupported):
            supports(DiffOp.identity(2))


class TestBracketDensity:
    def test_examples(self):
        K = half * u0 ** 2
        assert bracket_density(K, K, D) == u0 * u1
        L = u1 ** 2 * u0
        assert bracket_density(u0, L, D) == total_derivative(euler(L))
        assert bracket_density(const(5), L, D) == ZERO


class TestVerdict:
    def test_d(self):
        v = is_hamiltonian(D)
        assert v.skew and v.hamiltonian and v.witnesses == []

    def test_counterexample(self):
        v = is_hamiltonian(first_order_operator(u1))
        assert v.skew and not v.hamiltonian
        assert dict(v.witnesses)[(0, 0, 0, (0,), (3,))] == -u1
        assert v.to_json()["entries"][0].keys() == {"alpha", "beta", "gamma", "k", "l", "expr"}

    def test_non_skew(self):
        v = is_hamiltonian(DiffOp.D(power=2))
        assert not v.skew and not v.hamiltonian
        assert v.to_json()["defect"] == [{"row": 0, "col": 0, "i": [2], "coeff": "2"}]

    def test_fast_path(self):
        v = is_hamiltonian(first_order_operator(u1), fast_path=True)
        assert not v.hamiltonian
        with pytest.raises(Unsupported):
            first_order_lambda(DiffOp.D(power=3))

    def test_kdv_family(self):
        for b in (const(1), const(2) / 3):
            op = DiffOp.D(power=3) + (DiffOp.mult(u0) @ D + DiffOp.mult(half * u1)).scale(b)
            assert is_hamiltonian(op).hamiltonian

import random
from itertools import product

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dragonfly_lab.ec import (
    INFINITY,
    P256,
    P384,
    TOY11,
    BlindingState,
    NonResidueError,
    Point,
    get_curve,
    legendre_blinded,
    legendre_naive,
    make_blinding,
    mod_exp,
    sqrt_mod_p,
)


def squares_mod(p):
    return {x * x % p for x in range(1, p)}


def brute_points(curve):
    """Every affine point of a small curve, by exhaustive search."""
    p = curve.p
    return [Point(x, y) for x, y in product(range(p), repeat=2)
            if (y * y - (x ** 3 + curve.a * x + curve.b)) % p == 0]


def collinear_with_negation(curve, P, Q, R):
    """-R lies on the chord through P and Q (the tangent when P == Q)."""
    p = curve.p
    nx, ny = R.x, (-R.y) % p
    if P == Q:
        # tangent slope (3x^2 + a) / 2y, written without division
        return (2 * P.y * (ny - P.y) - (3 * P.x * P.x + curve.a) * (nx - P.x)) % p == 0
    return ((Q.x - P.x) * (ny - P.y) - (Q.y - P.y) * (nx - P.x)) % p == 0


class TestModExp:
    def test_zero_exponent(self):
        assert mod_exp(12345, 0, P256.p) == 1

    def test_small_value(self):
        assert 3 ** 5 % 11 == 1
        assert mod_exp(3, 5, 11) == 1

    @given(st.integers(min_value=1, max_value=P256.p - 1))
    @settings(max_examples=50)
    def test_fermat(self, x):
        assert mod_exp(x, P256.p - 1, P256.p) == 1

    def test_negative_exponent_rejected(self):
        with pytest.raises(ValueError):
            mod_exp(2, -1, 11)


class TestLegendre:
    def test_zero_and_one(self):
        assert legendre_naive(0, P256.p) == 0
        assert legendre_naive(1, P256.p) == 1

    def test_matches_square_table_mod_11(self):
        sq = squares_mod(11)
        assert sq == {1, 3, 4, 5, 9}
        for x in range(1, 11):
            assert legendre_naive(x, 11) == (1 if x in sq else -1)
        assert legendre_naive(3, 11) == 1

    @pytest.mark.parametrize("p", [11, P256.p])
    def test_blinded_equals_naive(self, p):
        rng = random.Random(7)
        blind = make_blinding(p, rng)
        for _ in range(1000):
            x = rng.randrange(1, p)
            assert legendre_blinded(x, blind, rng) == legendre_naive(x, p)

    def test_blinded_zero_and_qnr(self):
        rng = random.Random(3)
        blind = make_blinding(P256.p, rng)
        assert legendre_blinded(0, blind, rng) == 0
        assert legendre_blinded(blind.qnr, blind, rng) == -1
        assert legendre_blinded(blind.qr, blind, rng) == 1

    def test_blinded_equivalence_10k(self):
        rng = random.Random(11)
        blind = make_blinding(P256.p, rng)
        xs = [rng.randrange(1, P256.p) for _ in range(10_000)]
        assert all(legendre_blinded(x, blind, rng) == legendre_naive(x, P256.p) for x in xs)

    def test_residue_fraction_is_half(self):
        rng = random.Random(5)
        n = 10_000
        hits = sum(legendre_naive(rng.randrange(1, P256.p), P256.p) == 1 for _ in range(n))
        assert abs(hits / n - 0.5) <= 0.02

    def test_blinding_state_invariants(self):
        blind = make_blinding(11, random.Random(0))
        assert legendre_naive(blind.qr, 11) == 1
        assert legendre_naive(blind.qnr, 11) == -1
        with pytest.raises(ValueError):
            BlindingState(qr=2, qnr=3, p=11)  # 2 is a non-residue mod 11


class TestSqrt:
    def test_zero(self):
        assert sqrt_mod_p(0, P256.p) == 0

    def test_small(self):
        # brute force: which s have s^2 = 4 mod 11
        roots = {s for s in range(11) if s * s % 11 == 4}
        assert roots == {2, 9}
        assert sqrt_mod_p(4, 11) == 9

    def test_non_residue_raises(self):
        with pytest.raises(NonResidueError):
            sqrt_mod_p(2, 11)

    def test_p_1_mod_4_rejected(self):
        with pytest.raises(ValueError):
            sqrt_mod_p(4, 13)

    @given(st.integers(min_value=1, max_value=P256.p - 1))
    @settings(max_examples=200)
    def test_self_check_p256(self, s):
        x = s * s % P256.p
        r = sqrt_mod_p(x, P256.p)
        assert r * r % P256.p == x


class TestGroupLaw:
    def test_toy_curve_order(self):
        pts = brute_points(TOY11)
        assert len(pts) + 1 == TOY11.q == 13

    def test_group_table_exhaustive(self):
        pts = brute_points(TOY11) + [INFINITY]
        table = {(P, Q): TOY11.add(P, Q) for P in pts for Q in pts}
        for (P, Q), R in table.items():
            assert R in pts  # closure
            assert R == table[(Q, P)]  # commutative
            if P.is_infinity or Q.is_infinity:
                assert R == (Q if P.is_infinity else P)
            elif R.is_infinity:
                assert P.x == Q.x and (P.y + Q.y) % TOY11.p == 0
            else:
                assert collinear_with_negation(TOY11, P, Q, R)
        for P in pts:
            assert sum(table[(P, Q)].is_infinity for Q in pts) == 1  # unique inverse
            for Q in pts:
                for R in pts:
                    assert table[(table[(P, Q)], R)] == table[(P, table[(Q, R)])]

    def test_scalar_mul_matches_repeated_addition(self):
        acc = INFINITY
        for k in range(0, 2 * TOY11.q):
            assert TOY11.scalar_mul(k, TOY11.G) == acc
            acc = TOY11.add(acc, TOY11.G)

    @pytest.mark.parametrize("curve", [TOY11, P256, P384])
    def test_generator_order(self, curve):
        curve.validate()
        assert curve.scalar_mul(0, curve.G).is_infinity
        assert curve.add(curve.scalar_mul(curve.q - 1, curve.G), curve.G).is_infinity

    @pytest.mark.parametrize("curve", [TOY11, P256])
    def test_inverse(self, curve):
        P = curve.scalar_mul(5, curve.G)
        assert curve.add(P, curve.negate(P)).is_infinity
        assert curve.negate(INFINITY).is_infinity

    def test_on_curve(self):
        assert P256.is_on_curve(P256.G)
        assert not P256.is_on_curve(Point(P256.gx, (P256.gy + 1) % P256.p))
        assert P256.is_on_curve(INFINITY)
        assert not P256.is_on_curve(Point(P256.p, 0))

    @given(st.integers(min_value=1, max_value=2 ** 64), st.integers(min_value=1, max_value=2 ** 64))
    @settings(max_examples=20, deadline=None)
    def test_scalar_distributes(self, a, b):
        lhs = P256.scalar_mul(a + b, P256.G)
        rhs = P256.add(P256.scalar_mul(a, P256.G), P256.scalar_mul(b, P256.G))
        assert lhs == rhs


def test_registry():
    assert get_curve("P-256") is P256
    assert get_curve("P-384") is P384
    with pytest.raises(KeyError):
        get_curve("P-521")

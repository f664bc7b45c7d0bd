"""Prime-field and short-Weierstrass curve arithmetic.

Values are plain Python ints reduced modulo ``p``; points are immutable
:class:`Point` instances in affine coordinates with a distinguished
:data:`INFINITY`. Exponentiation goes through gmpy2 when it is importable.
"""

from __future__ import annotations

import secrets
from dataclasses import dataclass
from functools import cached_property

try:
    import gmpy2
except ImportError:  # pragma: no cover - exercised only without gmpy2
    gmpy2 = None


class NonResidueError(ValueError):
    """Raised when a square root is requested for a quadratic non-residue."""


def mod_exp(base: int, exponent: int, p: int) -> int:
    """Return ``base ** exponent mod p``."""
    if exponent < 0:
        raise ValueError("exponent must be non-negative")
    if gmpy2 is not None:
        return int(gmpy2.powmod(base, exponent, p))
    return pow(base, exponent, p)


def mod_inv(x: int, p: int) -> int:
    x %= p
    if x == 0:
        raise ZeroDivisionError("0 has no inverse modulo p")
    return pow(x, -1, p)


def legendre_naive(x: int, p: int) -> int:
    """Legendre symbol by Euler's criterion: -1, 0 or +1."""
    x %= p
    if x == 0:
        return 0
    ls = mod_exp(x, (p - 1) // 2, p)
    return -1 if ls == p - 1 else 1


@dataclass(frozen=True)
class BlindingState:
    """A per-session known residue / non-residue pair used to mask QR tests."""

    qr: int
    qnr: int
    p: int

    def __post_init__(self):
        if legendre_naive(self.qr, self.p) != 1:
            raise ValueError("qr is not a quadratic residue")
        if legendre_naive(self.qnr, self.p) != -1:
            raise ValueError("qnr is not a quadratic non-residue")


def make_blinding(p: int, rng=None) -> BlindingState:
    """Draw random field elements until one residue and one non-residue are found."""
    rng = rng or secrets.SystemRandom()
    qr = qnr = None
    while qr is None or qnr is None:
        c = rng.randrange(1, p)
        if legendre_naive(c, p) == 1:
            qr = qr if qr is not None else c
        else:
            qnr = qnr if qnr is not None else c
    return BlindingState(qr, qnr, p)


def legendre_blinded(x: int, blind: BlindingState, rng=None) -> int:
    """Legendre symbol of ``x`` evaluated on a randomly masked value.

    The tested value is ``x * r^2 * m`` where ``r`` is fresh per call and ``m``
    is the session residue or non-residue chosen by a coin flip; the sign is
    un-blinded afterwards so the result matches :func:`legendre_naive`.
    """
    rng = rng or secrets.SystemRandom()
    p = blind.p
    r = rng.randrange(1, p)
    use_qr = rng.getrandbits(1)
    masked = x % p * r % p * r % p
    if use_qr:
        return legendre_naive(masked * blind.qr % p, p)
    return -legendre_naive(masked * blind.qnr % p, p)


def sqrt_mod_p(x: int, p: int) -> int:
    """Square root for ``p = 3 mod 4``; the caller picks between s and p - s."""
    if p % 4 != 3:
        raise ValueError("only primes congruent to 3 mod 4 are supported")
    x %= p
    s = mod_exp(x, (p + 1) // 4, p)
    if s * s % p != x:
        raise NonResidueError(f"{x:#x} is not a square modulo p")
    return s


@dataclass(frozen=True)
class Point:
    """Affine curve point; ``x is None`` marks the point at infinity."""

    x: int | None = None
    y: int | None = None

    @property
    def is_infinity(self) -> bool:
        return self.x is None

    def __repr__(self):
        if self.is_infinity:
            return "Point(INFINITY)"
        return f"Point(x={self.x:#x}, y={self.y:#x})"


INFINITY = Point()


@dataclass(frozen=True)
class CurveParams:
    """Short Weierstrass curve ``y^2 = x^3 + a x + b`` over GF(p)."""

    name: str
    p: int
    a: int
    b: int
    gx: int
    gy: int
    q: int
    h: int = 1

    @property
    def G(self) -> Point:
        return Point(self.gx, self.gy)

    @cached_property
    def bit_length(self) -> int:
        return self.p.bit_length()

    @cached_property
    def byte_length(self) -> int:
        return (self.bit_length + 7) // 8

    def rhs(self, x: int) -> int:
        """``x^3 + a x + b mod p``."""
        p = self.p
        return (x * x % p * x + self.a * x + self.b) % p

    def is_on_curve(self, P: Point) -> bool:
        if P.is_infinity:
            return True
        if not (0 <= P.x < self.p and 0 <= P.y < self.p):
            return False
        return P.y * P.y % self.p == self.rhs(P.x)

    def negate(self, P: Point) -> Point:
        if P.is_infinity:
            return P
        return Point(P.x, (-P.y) % self.p)

    def add(self, P1: Point, P2: Point) -> Point:
        if P1.is_infinity:
            return P2
        if P2.is_infinity:
            return P1
        p = self.p
        if P1.x == P2.x:
            if (P1.y + P2.y) % p == 0:
                return INFINITY
            lam = (3 * P1.x * P1.x + self.a) * mod_inv(2 * P1.y, p) % p
        else:
            lam = (P2.y - P1.y) * mod_inv(P2.x - P1.x, p) % p
        x3 = (lam * lam - P1.x - P2.x) % p
        y3 = (lam * (P1.x - x3) - P1.y) % p
        return Point(x3, y3)

    def scalar_mul(self, k: int, P: Point) -> Point:
        """Left-to-right double-and-add; ``k`` is reduced modulo ``q``."""
        k %= self.q
        result = INFINITY
        for bit in bin(k)[2:]:
            result = self.add(result, result)
            if bit == "1":
                result = self.add(result, P)
        return result

    def validate(self) -> None:
        """Check the generator lies on the curve and has order ``q``."""
        if self.h != 1:
            raise ValueError("only cofactor-1 curves are supported")
        if not self.is_on_curve(self.G):
            raise ValueError(f"{self.name}: generator is not on the curve")
        # scalar_mul reduces mod q, so multiply by q - 1 and add G once more.
        if not self.add(self.scalar_mul(self.q - 1, self.G), self.G).is_infinity:
            raise ValueError(f"{self.name}: q * G is not the point at infinity")


# Module-level wrappers so callers can write point_add(curve, P, Q) style code.
def point_add(curve: CurveParams, P1: Point, P2: Point) -> Point:
    return curve.add(P1, P2)


def point_negate(curve: CurveParams, P: Point) -> Point:
    return curve.negate(P)


def scalar_mul(curve: CurveParams, k: int, P: Point) -> Point:
    return curve.scalar_mul(k, P)


def is_on_curve(curve: CurveParams, P: Point) -> bool:
    return curve.is_on_curve(P)


P256 = CurveParams(
    name="P-256",
    p=0xFFFFFFFF00000001000000000000000000000000FFFFFFFFFFFFFFFFFFFFFFFF,
    a=0xFFFFFFFF00000001000000000000000000000000FFFFFFFFFFFFFFFFFFFFFFFC,
    b=0x5AC635D8AA3A93E7B3EBBD55769886BC651D06B0CC53B0F63BCE3C3E27D2604B,
    gx=0x6B17D1F2E12C4247F8BCE6E563A440F277037D812DEB33A0F4A13945D898C296,
    gy=0x4FE342E2FE1A7F9B8EE7EB4A7C0F9E162BCE33576B315ECECBB6406837BF51F5,
    q=0xFFFFFFFF00000000FFFFFFFFFFFFFFFFBCE6FAADA7179E84F3B9CAC2FC632551,
)

P384 = CurveParams(
    name="P-384",
    p=int(
        "FFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFE"
        "FFFFFFFF0000000000000000FFFFFFFF", 16),
    a=int(
        "FFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFE"
        "FFFFFFFF0000000000000000FFFFFFFC", 16),
    b=int(
        "B3312FA7E23EE7E4988E056BE3F82D19181D9C6EFE8141120314088F5013875A"
        "C656398D8A2ED19D2A85C8EDD3EC2AEF", 16),
    gx=int(
        "AA87CA22BE8B05378EB1C71EF320AD746E1D3B628BA79B9859F741E082542A38"
        "5502F25DBF55296C3A545E3872760AB7", 16),
    gy=int(
        "3617DE4A96262C6F5D9E98BF9292DC29F8F41DBD289A147CE9DA3113B5F0B8C0"
        "0A60B1CE1D7E819D7A431D7C90EA0E5F", 16),
    q=int(
        "FFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFC7634D81F4372DDF"
        "581A0DB248B0A77AECEC196ACCC52973", 16),
)

# y^2 = x^3 + x + 6 over GF(11): 13 points, prime order, 11 = 3 mod 4.
TOY11 = CurveParams(name="toy-11", p=11, a=1, b=6, gx=2, gy=7, q=13)

CURVES = {c.name: c for c in (P256, P384, TOY11)}


def get_curve(name: str) -> CurveParams:
    try:
        return CURVES[name]
    except KeyError:
        raise KeyError(f"unknown curve {name!r}; known: {', '.join(CURVES)}") from None

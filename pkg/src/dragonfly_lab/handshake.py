"""Dragonfly commit/confirm exchange between two in-process parties."""

from __future__ import annotations

import enum
import hashlib
import hmac
import secrets
import struct
from collections import deque
from dataclasses import dataclass, field

from .derive import (
    DerivationContext,
    Identity,
    Mode,
    Profile,
    Variant,
    derive_pwe,
    get_profile,
    kdf_expand,
)
from .ec import CurveParams, Point


class HandshakeError(Exception):
    """Base class for aborted handshakes."""


class OutOfBoundsScalar(HandshakeError):
    pass


class ElementNotOnGroup(HandshakeError):
    pass


class PasswordElementNotFound(HandshakeError):
    pass


class ConfirmMismatch(HandshakeError):
    pass


class Phase(enum.IntEnum):
    INIT = 0
    COMMITTED = 1
    CONFIRMED = 2
    FAILED = 3


@dataclass(frozen=True)
class CommitFrame:
    scalar: int
    element: Point

    def to_bytes(self, curve: CurveParams) -> bytes:
        n = curve.byte_length
        if self.element.is_infinity:
            raise ValueError("cannot encode the point at infinity")
        return (self.scalar.to_bytes(n, "big") + b"\x04"
                + self.element.x.to_bytes(n, "big") + self.element.y.to_bytes(n, "big"))

    @classmethod
    def from_bytes(cls, data: bytes, curve: CurveParams) -> "CommitFrame":
        n = curve.byte_length
        if len(data) != 3 * n + 1 or data[n] != 0x04:
            raise ValueError("malformed commit frame")
        scalar = int.from_bytes(data[:n], "big")
        x = int.from_bytes(data[n + 1:2 * n + 1], "big")
        y = int.from_bytes(data[2 * n + 1:], "big")
        return cls(scalar, Point(x, y))


@dataclass(frozen=True)
class ConfirmFrame:
    tag: bytes

    def __post_init__(self):
        if len(self.tag) != 32:
            raise ValueError("confirm tag must be 32 bytes")

    def to_bytes(self) -> bytes:
        return self.tag

    @classmethod
    def from_bytes(cls, data: bytes) -> "ConfirmFrame":
        return cls(bytes(data))


def _lp(data: bytes) -> bytes:
    return struct.pack(">I", len(data)) + data


@dataclass
class Party:
    """One side of the exchange; phases only move forward."""

    identity: Identity
    peer: Identity
    pwe: Point
    curve: CurveParams
    label: bytes = b"SAE-KCK-MK"
    phase: Phase = Phase.INIT
    r: int | None = None
    m: int | None = None
    sent: CommitFrame | None = None
    received: CommitFrame | None = None
    kck: bytes | None = None
    mk: bytes | None = None
    error: HandshakeError | None = field(default=None, repr=False)

    def _require(self, phase: Phase):
        if self.phase is Phase.FAILED:
            raise HandshakeError("party already failed") from self.error
        if self.phase is not phase:
            raise HandshakeError(f"expected phase {phase.name}, in {self.phase.name}")

    def _fail(self, exc: HandshakeError):
        self.phase = Phase.FAILED
        self.error = exc
        raise exc

    def make_commit(self, rng=None, *, r: int | None = None, m: int | None = None) -> CommitFrame:
        """Draw ``r, m`` in [2, q) and publish ``s = r + m``, ``Q = -m P``.

        ``r`` and ``m`` may be forced for testing.
        """
        self._require(Phase.INIT)
        rng = rng or secrets.SystemRandom()
        q = self.curve.q
        self.r = r if r is not None else rng.randrange(2, q)
        self.m = m if m is not None else rng.randrange(2, q)
        s = (self.r + self.m) % q
        Q = self.curve.negate(self.curve.scalar_mul(self.m, self.pwe))
        self.sent = CommitFrame(s, Q)
        self.phase = Phase.COMMITTED
        return self.sent

    def process_commit(self, frame: CommitFrame) -> int:
        """Validate the peer commit and derive ``kck`` and ``mk``; returns x(K)."""
        self._require(Phase.COMMITTED)
        curve = self.curve
        if not 2 <= frame.scalar < curve.q:
            self._fail(OutOfBoundsScalar(f"peer scalar outside [2, q): {frame.scalar}"))
        if frame.element.is_infinity or not curve.is_on_curve(frame.element):
            self._fail(ElementNotOnGroup("peer element is not a point of the group"))
        self.received = frame
        K = curve.scalar_mul(self.r, curve.add(curve.scalar_mul(frame.scalar, self.pwe),
                                               frame.element))
        if K.is_infinity:
            self._fail(ElementNotOnGroup("shared point is the point at infinity"))
        n = curve.byte_length
        keyseed = hmac.new(bytes(32), K.x.to_bytes(n, "big"), hashlib.sha256).digest()
        context = ((self.sent.scalar + frame.scalar) % curve.q).to_bytes(n, "big")
        keys = kdf_expand(keyseed, self.label, context, 512)
        self.kck, self.mk = keys[:32], keys[32:]
        return K.x

    def transcript(self) -> bytes:
        """Both commits, smaller identity first, each length-prefixed."""
        mine = self.sent.to_bytes(self.curve)
        theirs = self.received.to_bytes(self.curve)
        if self.identity.value <= self.peer.value:
            first, second = mine, theirs
        else:
            first, second = theirs, mine
        return _lp(first) + _lp(second)

    def make_confirm(self) -> ConfirmFrame:
        if self.kck is None:
            raise HandshakeError("peer commit not processed yet")
        return ConfirmFrame(hmac.new(self.kck, self.transcript(), hashlib.sha256).digest())

    def verify_confirm(self, frame: ConfirmFrame) -> bool:
        if self.kck is None:
            raise HandshakeError("peer commit not processed yet")
        if self.phase is Phase.FAILED:
            return False
        expected = hmac.new(self.kck, self.transcript(), hashlib.sha256).digest()
        if hmac.compare_digest(expected, frame.tag):
            self.phase = Phase.CONFIRMED
            return True
        self.phase = Phase.FAILED
        self.error = ConfirmMismatch("peer confirm tag does not verify")
        return False


class Channel:
    """Ordered, reliable in-process duplex link."""

    def __init__(self):
        self._queues = {"a": deque(), "b": deque()}

    def send(self, to: str, payload: bytes):
        self._queues[to].append(payload)

    def recv(self, at: str) -> bytes:
        return self._queues[at].popleft()


@dataclass
class HandshakeOutcome:
    success: bool
    stage: str  # "derive", "commit", "confirm" or "done"
    mk_a: bytes | None = None
    mk_b: bytes | None = None
    kck_a: bytes | None = None
    kck_b: bytes | None = None
    error: str | None = None


def _pwe(profile: Profile, password, ident_a, ident_b, token, mode, rng):
    ctx = DerivationContext.from_profile(profile, ident_a, ident_b, password, mode, token)
    result = derive_pwe(ctx, rng=rng)
    if not result.found:
        raise PasswordElementNotFound(f"no element within {profile.k_max} iterations")
    return result.element


def run_handshake(pw_a, pw_b, id_a: Identity, id_b: Identity, profile: Profile | str = "iwd-sae",
                  *, rng=None, mode: Mode | str = Mode.VULNERABLE, b_first: bool = False,
                  token: bytes | None = None) -> HandshakeOutcome:
    """Drive both parties to completion over a :class:`Channel`.

    For EAP-pwd a 4-byte session token is drawn from ``rng`` unless given.
    ``b_first`` swaps which party transmits first.
    """
    rng = rng or secrets.SystemRandom()
    if isinstance(profile, str):
        profile = get_profile(profile)
    curve = profile.curve
    if profile.variant is Variant.EAP_PWD:
        token = token if token is not None else rng.randbytes(4)
        # EAP-pwd hashes peer id then server id on both ends.
        order_a, order_b = (id_a, id_b), (id_a, id_b)
    else:
        token = None
        order_a, order_b = (id_a, id_b), (id_b, id_a)
    try:
        pwe_a = _pwe(profile, pw_a, *order_a, token, mode, rng)
        pwe_b = _pwe(profile, pw_b, *order_b, token, mode, rng)
    except PasswordElementNotFound as exc:
        return HandshakeOutcome(False, "derive", error=str(exc))

    a = Party(id_a, id_b, pwe_a, curve, profile.kck_label)
    b = Party(id_b, id_a, pwe_b, curve, profile.kck_label)
    chan = Channel()
    order = [("b", b, "a"), ("a", a, "b")] if b_first else [("a", a, "b"), ("b", b, "a")]

    for name, party, peer in order:
        chan.send(peer, party.make_commit(rng).to_bytes(curve))
    try:
        for name, party, _ in order:
            party.process_commit(CommitFrame.from_bytes(chan.recv(name), curve))
    except HandshakeError as exc:
        return HandshakeOutcome(False, "commit", error=str(exc))

    for name, party, peer in order:
        chan.send(peer, party.make_confirm().to_bytes())
    ok = [party.verify_confirm(ConfirmFrame.from_bytes(chan.recv(name)))
          for name, party, _ in order]
    if not all(ok):
        return HandshakeOutcome(False, "confirm", error="confirm verification failed")
    return HandshakeOutcome(True, "done", a.mk, b.mk, a.kck, b.kck)

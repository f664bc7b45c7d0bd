"""Hunting-and-pecking password-to-curve conversion.

Two protocol variants are supported (SAE and EAP-pwd), each runnable in a
``vulnerable`` mode that branches on the quadratic-residue outcome the way
deployed daemons did, and a ``hardened`` mode that executes the same
operation sequence for every password and selects the first success by
arithmetic masking. An optional :class:`EventSink` records the operations a
cache spy could observe; :mod:`dragonfly_lab.sidechannel` consumes it.
"""

from __future__ import annotations

import enum
import hashlib
import hmac
import re
import secrets
import struct
from dataclasses import dataclass, field, replace

from .ec import (
    P256,
    CurveParams,
    Point,
    get_curve,
    legendre_blinded,
    legendre_naive,
    make_blinding,
    sqrt_mod_p,
)

SAE_LABEL = b"SAE Hunting and Pecking"
EAP_PWD_LABEL = b"EAP-pwd Hunting And Pecking"
EAP_PWD_CEILING = 256


class Variant(str, enum.Enum):
    SAE = "sae"
    EAP_PWD = "eap-pwd"


class Mode(str, enum.Enum):
    VULNERABLE = "vulnerable"
    HARDENED = "hardened"


@dataclass(frozen=True)
class Identity:
    """A party identity: a 6-byte MAC address or an opaque byte string."""

    value: bytes
    is_mac: bool = True

    def __post_init__(self):
        if self.is_mac and len(self.value) != 6:
            raise ValueError(f"MAC address must be 6 bytes, got {len(self.value)}")

    @classmethod
    def mac(cls, text: str) -> "Identity":
        digits = re.sub(r"[:\-.\s]", "", text)
        if not re.fullmatch(r"[0-9a-fA-F]{12}", digits):
            raise ValueError(f"not a MAC address: {text!r}")
        return cls(bytes.fromhex(digits), True)

    @classmethod
    def opaque(cls, value: bytes | str) -> "Identity":
        if isinstance(value, str):
            value = value.encode("utf-8")
        return cls(bytes(value), False)

    @classmethod
    def parse(cls, text: str) -> "Identity":
        """MAC if it looks like one, ``hex:``-prefixed bytes, else UTF-8 opaque id."""
        try:
            return cls.mac(text)
        except ValueError:
            pass
        if text.startswith("hex:"):
            return cls.opaque(bytes.fromhex(text[4:]))
        return cls.opaque(text)

    def __str__(self):
        if self.is_mac:
            return self.value.hex().upper()
        return self.value.decode("utf-8", "backslashreplace")


def parse_password(text: str | bytes) -> bytes:
    """UTF-8 by default; a ``hex:`` prefix selects raw bytes."""
    if isinstance(text, bytes):
        return text
    if text.startswith("hex:"):
        return bytes.fromhex(text[4:])
    return text.encode("utf-8")


def random_mac(rng) -> Identity:
    return Identity(rng.randbytes(6), True)


@dataclass(frozen=True)
class Profile:
    name: str
    variant: Variant
    k_max: int
    curve: CurveParams = P256
    kck_label: bytes = b"SAE-KCK-MK"


PROFILES = {
    "iwd-sae": Profile("iwd-sae", Variant.SAE, 20),
    "rfc7664-sae": Profile("rfc7664-sae", Variant.SAE, 40),
    "eap-pwd": Profile("eap-pwd", Variant.EAP_PWD, 40, kck_label=b"EAP-pwd-KCK-MK"),
}


def get_profile(name: str) -> Profile:
    try:
        return PROFILES[name]
    except KeyError:
        raise KeyError(f"unknown profile {name!r}; known: {', '.join(PROFILES)}") from None


@dataclass(frozen=True)
class DerivationContext:
    variant: Variant
    id_a: Identity
    id_b: Identity
    password: bytes
    curve: CurveParams = P256
    k_max: int = 20
    mode: Mode = Mode.VULNERABLE
    token: bytes | None = None

    def __post_init__(self):
        if self.k_max < 1:
            raise ValueError("k_max must be at least 1")
        if (self.variant is Variant.EAP_PWD) != (self.token is not None):
            raise ValueError("a token is required for EAP-pwd and forbidden for SAE")
        if self.token is not None and len(self.token) != 4:
            raise ValueError("EAP-pwd token must be 4 bytes")

    @classmethod
    def from_profile(cls, profile: Profile | str, id_a: Identity, id_b: Identity,
                     password: bytes | str, mode: Mode | str = Mode.VULNERABLE,
                     token: bytes | None = None) -> "DerivationContext":
        if isinstance(profile, str):
            profile = get_profile(profile)
        return cls(
            variant=profile.variant,
            id_a=id_a,
            id_b=id_b,
            password=parse_password(password),
            curve=profile.curve,
            k_max=profile.k_max,
            mode=Mode(mode),
            token=token,
        )

    def with_mode(self, mode: Mode | str) -> "DerivationContext":
        return replace(self, mode=Mode(mode))


class EventKind(str, enum.Enum):
    ITERATION_START = "IterationStart"
    KDF_CALL = "KdfCall"
    RANDOM_CALL = "RandomCall"
    QR_TEST = "QrTest"
    SUCCESS_BLOCK = "SuccessBlock"
    SELECT = "Select"


class EventSink:
    """Append-only record of the operations executed during one derivation."""

    def __init__(self):
        self.events: list[tuple[EventKind, dict]] = []

    def emit(self, kind: EventKind, **data) -> None:
        self.events.append((kind, data))

    def kinds(self) -> tuple[EventKind, ...]:
        return tuple(kind for kind, _ in self.events)

    def iterations(self) -> list[list[EventKind]]:
        """Event kinds grouped per loop pass."""
        out: list[list[EventKind]] = []
        for kind, _ in self.events:
            if kind is EventKind.ITERATION_START:
                out.append([])
            elif out:
                out[-1].append(kind)
        return out


class _NullSink(EventSink):
    def emit(self, kind, **data):
        pass


@dataclass(frozen=True)
class IterationRecord:
    counter: int
    qr: int  # Legendre symbol of the candidate's rhs; 0 when the candidate was >= p
    was_first_success: bool
    dummy: bool = False


@dataclass
class DerivationResult:
    element: Point | None
    success_iteration: int | None
    iterations_executed: int
    outcome_log: list[IterationRecord] = field(default_factory=list)

    @property
    def found(self) -> bool:
        return self.success_iteration is not None


def kdf_expand(key: bytes, label: bytes, context: bytes, bits: int) -> bytes:
    """Counter-mode HMAC-SHA-256 expansion to ``bits`` bits (leftmost bits kept)."""
    n_blocks = (bits + 255) // 256
    out = b"".join(
        hmac.new(key, struct.pack("<H", i) + label + context + struct.pack("<H", bits),
                 hashlib.sha256).digest()
        for i in range(1, n_blocks + 1)
    )
    n_bytes = (bits + 7) // 8
    out = out[:n_bytes]
    extra = 8 * n_bytes - bits
    if extra:
        out = (int.from_bytes(out, "big") >> extra).to_bytes(n_bytes, "big")
    return out


def _seed_key_and_message(variant: Variant, id_a: Identity, id_b: Identity,
                          password: bytes, counter: int, token: bytes | None):
    ctr = struct.pack("B", counter & 0xFF)
    if variant is Variant.SAE:
        hi, lo = max(id_a.value, id_b.value), min(id_a.value, id_b.value)
        return hi + lo, password + ctr
    return bytes(32), token + id_a.value + id_b.value + password + ctr


def _seed_and_value(curve: CurveParams, variant: Variant, id_a: Identity, id_b: Identity,
                    password: bytes, counter: int, token: bytes | None):
    key, msg = _seed_key_and_message(variant, id_a, id_b, password, counter, token)
    seed = hmac.new(key, msg, hashlib.sha256).digest()
    label = SAE_LABEL if variant is Variant.SAE else EAP_PWD_LABEL
    p_bytes = curve.p.to_bytes(curve.byte_length, "big")
    value = int.from_bytes(kdf_expand(seed, label, p_bytes, curve.bit_length), "big")
    return seed, value, seed[-1] & 1


def seed_and_value(ctx: DerivationContext, counter: int,
                   password: bytes | None = None) -> tuple[bytes, int, int]:
    """Seed digest, candidate x value and parity bit for one loop counter.

    The candidate may be ``>= p``; callers treat that as a failed iteration.
    """
    if counter < 1:
        raise ValueError("counter starts at 1")
    pw = ctx.password if password is None else password
    return _seed_and_value(ctx.curve, ctx.variant, ctx.id_a, ctx.id_b, pw, counter, ctx.token)


def _finish(curve: CurveParams, x: int, parity: int) -> Point:
    y = sqrt_mod_p(curve.rhs(x), curve.p)
    if (y & 1) != parity:
        y = (curve.p - y) % curve.p
    return Point(x, y)


def derive_pwe(ctx: DerivationContext, sink: EventSink | None = None,
               rng=None) -> DerivationResult:
    """Convert the password of ``ctx`` to a curve point.

    ``rng`` feeds the blinding values and the dummy-password strings; it never
    affects the resulting element.
    """
    sink = sink if sink is not None else _NullSink()
    rng = rng or secrets.SystemRandom()
    if ctx.mode is Mode.HARDENED:
        return _derive_hardened(ctx, sink, rng)
    if ctx.variant is Variant.SAE:
        return _derive_sae_vulnerable(ctx, sink, rng)
    return _derive_eap_vulnerable(ctx, sink, rng)


def _qr_test(curve: CurveParams, value: int, blind, sink: EventSink, rng) -> int:
    sink.emit(EventKind.RANDOM_CALL, purpose="blind")
    qr = legendre_blinded(curve.rhs(value), blind, rng)
    sink.emit(EventKind.QR_TEST, result=qr)
    return qr


def _derive_sae_vulnerable(ctx, sink, rng):
    curve = ctx.curve
    blind = make_blinding(curve.p, rng)
    log = []
    found_at = None
    x = parity = None
    dummy = None
    for counter in range(1, ctx.k_max + 1):
        sink.emit(EventKind.ITERATION_START, counter=counter)
        pw = ctx.password if found_at is None else dummy
        _, value, bit = seed_and_value(ctx, counter, pw)
        sink.emit(EventKind.KDF_CALL, counter=counter)
        if value >= curve.p:
            log.append(IterationRecord(counter, 0, False, found_at is not None))
            continue
        qr = _qr_test(curve, value, blind, sink, rng)
        first = qr == 1 and found_at is None
        log.append(IterationRecord(counter, qr, first, found_at is not None))
        if first:
            sink.emit(EventKind.SUCCESS_BLOCK, counter=counter)
            found_at, x, parity = counter, value, bit
            # remaining iterations hash a random string of the same length
            sink.emit(EventKind.RANDOM_CALL, purpose="dummy")
            dummy = rng.randbytes(len(ctx.password))
    element = _finish(curve, x, parity) if found_at is not None else None
    return DerivationResult(element, found_at, ctx.k_max, log)


def _derive_eap_vulnerable(ctx, sink, rng):
    curve = ctx.curve
    blind = make_blinding(curve.p, rng)
    log = []
    for counter in range(1, EAP_PWD_CEILING + 1):
        sink.emit(EventKind.ITERATION_START, counter=counter)
        _, value, bit = seed_and_value(ctx, counter)
        sink.emit(EventKind.KDF_CALL, counter=counter)
        if value >= curve.p:
            log.append(IterationRecord(counter, 0, False))
            continue
        qr = _qr_test(curve, value, blind, sink, rng)
        log.append(IterationRecord(counter, qr, qr == 1))
        if qr == 1:
            sink.emit(EventKind.SUCCESS_BLOCK, counter=counter)
            return DerivationResult(_finish(curve, value, bit), counter, counter, log)
    return DerivationResult(None, None, EAP_PWD_CEILING, log)


def _derive_hardened(ctx, sink, rng):
    curve = ctx.curve
    p = curve.p
    blind = make_blinding(p, rng)
    log = []
    found = 0
    sel_x = sel_parity = sel_counter = 0
    for counter in range(1, ctx.k_max + 1):
        sink.emit(EventKind.ITERATION_START, counter=counter)
        _, value, bit = seed_and_value(ctx, counter)
        sink.emit(EventKind.KDF_CALL, counter=counter)
        in_range = int(value < p)
        qr = _qr_test(curve, value % p, blind, sink, rng)
        is_residue = in_range & int(qr == 1)
        take = (1 - found) & is_residue
        # arithmetic select: no branch on the secret-dependent bit
        sel_x += take * (value - sel_x)
        sel_parity += take * (bit - sel_parity)
        sel_counter += take * (counter - sel_counter)
        found |= take
        sink.emit(EventKind.SELECT)
        log.append(IterationRecord(counter, qr * in_range, bool(take)))
    if not found:
        return DerivationResult(None, None, ctx.k_max, log)
    return DerivationResult(_finish(curve, sel_x, sel_parity), sel_counter, ctx.k_max, log)


def operation_trace_fingerprint(ctx: DerivationContext, rng=None) -> tuple[str, ...]:
    """Event-kind sequence of one derivation with all data stripped."""
    sink = EventSink()
    derive_pwe(ctx, sink, rng)
    return tuple(k.value for k in sink.kinds())


def count_iterations(password: bytes, id_a: Identity, id_b: Identity, *,
                     curve: CurveParams = P256, variant: Variant = Variant.SAE,
                     token: bytes | None = None, limit: int = 20) -> int | None:
    """Success iteration of the conversion, or ``None`` if beyond ``limit``.

    Unblinded and without dummy iterations: only the success index is computed,
    which is all an offline attacker needs.
    """
    p = curve.p
    for counter in range(1, limit + 1):
        _, value, _ = _seed_and_value(curve, variant, id_a, id_b, password, counter, token)
        if value < p and legendre_naive(curve.rhs(value), p) == 1:
            return counter
    return None


def scan_high_iteration(dictionary, id_a: Identity, id_b: Identity, threshold: int,
                        *, curve: CurveParams = P256, limit: int = EAP_PWD_CEILING):
    """Dictionary entries whose SAE conversion needs more than ``threshold`` iterations.

    Returns ``(password, iterations)`` pairs; iterations is ``None`` when no
    success occurs within ``limit`` counters.
    """
    if threshold < 0:
        raise ValueError("threshold must be non-negative")
    hits = []
    for pw in dictionary:
        raw = parse_password(pw)
        k = count_iterations(raw, id_a, id_b, curve=curve, limit=limit)
        if k is None or k > threshold:
            hits.append((pw, k))
    return hits


__all__ = [
    "DerivationContext", "DerivationResult", "EventKind", "EventSink", "Identity",
    "IterationRecord", "Mode", "PROFILES", "Profile", "Variant", "count_iterations",
    "derive_pwe", "get_curve", "get_profile", "kdf_expand", "operation_trace_fingerprint",
    "parse_password", "random_mac", "scan_high_iteration", "seed_and_value",
]

import random

import pytest

from dragonfly_lab.derive import (
    DerivationContext,
    Identity,
    Profile,
    Variant,
    derive_pwe,
    random_mac,
)
from dragonfly_lab.ec import P256, Point
from dragonfly_lab.handshake import (
    CommitFrame,
    ConfirmFrame,
    ElementNotOnGroup,
    HandshakeError,
    OutOfBoundsScalar,
    Party,
    Phase,
    run_handshake,
)

A = Identity.mac("02:00:00:00:00:01")
B = Identity.mac("02:00:00:00:00:02")


def pwe(pw="secret"):
    ctx = DerivationContext.from_profile("iwd-sae", A, B, pw)
    return derive_pwe(ctx, rng=random.Random(0)).element


def pair(pw_a="secret", pw_b="secret"):
    a = Party(A, B, pwe(pw_a), P256)
    b = Party(B, A, pwe(pw_b), P256)
    return a, b


class TestCommit:
    def test_forced_scalars(self):
        a, _ = pair()
        frame = a.make_commit(r=2, m=3)
        assert frame.scalar == 5
        assert frame.element == P256.scalar_mul(3, P256.negate(a.pwe))
        assert a.phase is Phase.COMMITTED

    def test_closure(self):
        rng = random.Random(1)
        for _ in range(20):
            a, _ = pair()
            f = a.make_commit(rng)
            assert 0 <= f.scalar < P256.q
            assert P256.is_on_curve(f.element)

    def test_fresh_frames_differ(self):
        rng = random.Random(2)
        seen = set()
        for _ in range(1000):
            a = Party(A, B, Point(P256.gx, P256.gy), P256)
            seen.add(a.make_commit(rng).scalar)
        assert len(seen) == 1000

    def test_wire_round_trip(self):
        a, _ = pair()
        f = a.make_commit(random.Random(3))
        data = f.to_bytes(P256)
        assert len(data) == 3 * 32 + 1 and data[32] == 0x04
        assert CommitFrame.from_bytes(data, P256) == f
        with pytest.raises(ValueError):
            CommitFrame.from_bytes(data[:-1], P256)

    def test_confirm_frame_length(self):
        with pytest.raises(ValueError):
            ConfirmFrame(b"short")

    def test_phase_order(self):
        a, _ = pair()
        with pytest.raises(HandshakeError):
            a.make_confirm()
        a.make_commit(random.Random(0))
        with pytest.raises(HandshakeError):
            a.make_commit(random.Random(0))


class TestValidation:
    def committed(self):
        a, b = pair()
        rng = random.Random(4)
        a.make_commit(rng)
        return a, b.make_commit(rng)

    @pytest.mark.parametrize("scalar", [0, 1, P256.q, P256.q + 5])
    def test_scalar_bounds(self, scalar):
        a, fb = self.committed()
        with pytest.raises(OutOfBoundsScalar):
            a.process_commit(CommitFrame(scalar, fb.element))
        assert a.phase is Phase.FAILED
        # no use after failure
        with pytest.raises(HandshakeError):
            a.process_commit(fb)

    def test_scalar_two_accepted(self):
        a, fb = self.committed()
        a.process_commit(CommitFrame(2, fb.element))
        assert a.kck is not None

    def test_off_curve(self):
        a, fb = self.committed()
        bad = Point(fb.element.x, (fb.element.y + 1) % P256.p)
        with pytest.raises(ElementNotOnGroup):
            a.process_commit(CommitFrame(fb.scalar, bad))
        assert a.phase is Phase.FAILED

    def test_infinity(self):
        a, fb = self.committed()
        with pytest.raises(ElementNotOnGroup):
            a.process_commit(CommitFrame(fb.scalar, Point()))

    def test_shared_secret_matches(self):
        a, b = pair()
        rng = random.Random(5)
        fa, fb = a.make_commit(rng), b.make_commit(rng)
        # K = r_a r_b P on both sides
        expect = P256.scalar_mul(a.r * b.r, a.pwe).x
        assert a.process_commit(fb) == expect
        assert b.process_commit(fa) == expect
        assert a.kck == b.kck and a.mk == b.mk


class TestConfirm:
    def test_tampered_transcript(self):
        a, b = pair()
        rng = random.Random(6)
        fa, fb = a.make_commit(rng), b.make_commit(rng)
        a.process_commit(fb)
        b.process_commit(fa)
        tag = a.make_confirm()
        b.sent = CommitFrame((b.sent.scalar + 1) % P256.q, b.sent.element)
        assert not b.verify_confirm(tag)
        assert b.phase is Phase.FAILED

    def test_mismatch(self):
        a, b = pair("one", "two")
        rng = random.Random(7)
        fa, fb = a.make_commit(rng), b.make_commit(rng)
        a.process_commit(fb)
        b.process_commit(fa)
        assert not b.verify_confirm(a.make_confirm())
        assert not a.verify_confirm(b.make_confirm())


class TestRunHandshake:
    def test_matched(self):
        rng = random.Random(8)
        for i in range(100):
            out = run_handshake(f"pw{i}", f"pw{i}", random_mac(rng), random_mac(rng), rng=rng)
            assert out.success and out.stage == "done"
            assert out.mk_a == out.mk_b and out.kck_a == out.kck_b
            assert len(out.mk_a) == 32

    def test_mismatched(self):
        rng = random.Random(9)
        for i in range(100):
            out = run_handshake(f"pw{i}", f"other{i}", random_mac(rng), random_mac(rng), rng=rng)
            assert not out.success and out.stage == "confirm"

    def test_role_symmetry(self):
        o1 = run_handshake("pw", "pw", A, B, rng=random.Random(10))
        o2 = run_handshake("pw", "pw", A, B, rng=random.Random(10), b_first=True)
        assert o1.success and o2.success
        assert o1.mk_a == o1.mk_b and o2.mk_a == o2.mk_b

    def test_processing_order_does_not_change_keys(self):
        keys = []
        for b_first in (False, True):
            a, b = pair()
            fa, fb = a.make_commit(r=11, m=12), b.make_commit(r=21, m=22)
            for party, frame in ([(b, fa), (a, fb)] if b_first else [(a, fb), (b, fa)]):
                party.process_commit(frame)
            tags = (a.make_confirm(), b.make_confirm())
            assert a.verify_confirm(tags[1]) and b.verify_confirm(tags[0])
            keys.append((a.mk, b.mk, a.kck))
        assert keys[0] == keys[1]

    @pytest.mark.parametrize("mode", ["vulnerable", "hardened"])
    def test_eap_pwd(self, mode):
        rng = random.Random(11)
        peer, server = Identity.opaque("alice"), Identity.opaque("radius")
        out = run_handshake("pw", "pw", peer, server, "eap-pwd", rng=rng, mode=mode)
        assert out.success and out.mk_a == out.mk_b
        out = run_handshake("pw", "px", peer, server, "eap-pwd", rng=rng, mode=mode)
        assert not out.success

    def test_not_found_fails_before_commit(self):
        # a password needing two iterations cannot convert with a cap of one
        prof = Profile("tiny", Variant.SAE, 1)
        pw = next(f"nf{i}" for i in range(1000)
                  if derive_pwe(DerivationContext.from_profile("iwd-sae", A, B, f"nf{i}"),
                                rng=random.Random(0)).success_iteration == 2)
        out = run_handshake(pw, pw, A, B, prof, rng=random.Random(0))
        assert not out.success and out.stage == "derive"

import hashlib
import hmac
import math
import random
import struct
from collections import Counter

import pytest

from dragonfly_lab.derive import (
    EAP_PWD_CEILING,
    DerivationContext,
    EventKind,
    EventSink,
    Identity,
    Mode,
    Variant,
    count_iterations,
    derive_pwe,
    get_profile,
    kdf_expand,
    operation_trace_fingerprint,
    parse_password,
    random_mac,
    scan_high_iteration,
    seed_and_value,
)
from dragonfly_lab.ec import P256, legendre_naive

A = Identity.mac("02:00:00:00:00:01")
B = Identity.mac("02:00:00:00:00:02")


def sae(pw, a=A, b=B, mode="vulnerable", k_max=20):
    return DerivationContext(Variant.SAE, a, b, parse_password(pw), P256, k_max, Mode(mode))


def eap(pw, token=b"\x00\x01\x02\x03", mode="vulnerable"):
    return DerivationContext.from_profile("eap-pwd", Identity.opaque("peer"),
                                          Identity.opaque("server"), pw, mode, token)


def find_password(k, ctx_of, start=0):
    """First password of the form pw<i> whose conversion succeeds at ``k``."""
    for i in range(start, start + 100_000):
        pw = f"pw{i}"
        if derive_pwe(ctx_of(pw), rng=random.Random(0)).success_iteration == k:
            return pw
    raise AssertionError("no password found")


class TestIdentity:
    def test_mac_forms(self):
        assert Identity.mac("02-00-00-00-00-01") == A
        assert Identity.parse("020000000001") == A
        assert str(A) == "020000000001"

    def test_mac_length(self):
        with pytest.raises(ValueError):
            Identity(b"\x00" * 5, True)

    def test_opaque_and_hex(self):
        assert Identity.parse("hex:6869") == Identity.opaque(b"hi")
        assert Identity.parse("alice") == Identity.opaque("alice")

    def test_password_hex(self):
        assert parse_password("hex:00ff") == b"\x00\xff"
        assert parse_password("abc") == b"abc"


class TestContext:
    def test_token_rules(self):
        with pytest.raises(ValueError):
            DerivationContext(Variant.EAP_PWD, A, B, b"x")
        with pytest.raises(ValueError):
            DerivationContext(Variant.SAE, A, B, b"x", token=b"1234")
        with pytest.raises(ValueError):
            DerivationContext(Variant.EAP_PWD, A, B, b"x", token=b"123")

    def test_k_max(self):
        with pytest.raises(ValueError):
            sae("x", k_max=0)

    def test_profiles(self):
        assert get_profile("iwd-sae").k_max == 20
        assert get_profile("rfc7664-sae").k_max == 40
        assert get_profile("eap-pwd").variant is Variant.EAP_PWD
        with pytest.raises(KeyError):
            get_profile("wpa2")


class TestKdf:
    def test_first_block_matches_hmac(self):
        key, label, ctx = b"k" * 32, b"L", b"C"
        expect = hmac.new(key, struct.pack("<H", 1) + label + ctx + struct.pack("<H", 256),
                          hashlib.sha256).digest()
        assert kdf_expand(key, label, ctx, 256) == expect

    def test_lengths_and_truncation(self):
        assert len(kdf_expand(b"k", b"L", b"C", 512)) == 64
        assert len(kdf_expand(b"k", b"L", b"C", 521)) == 66
        v = int.from_bytes(kdf_expand(b"k", b"L", b"C", 255), "big")
        assert v < 2 ** 255

    def test_length_is_bound(self):
        # the output length is part of the input, so prefixes differ
        assert kdf_expand(b"k", b"L", b"C", 512)[:32] != kdf_expand(b"k", b"L", b"C", 256)


class TestSeedAndValue:
    def test_deterministic(self):
        assert seed_and_value(sae("pw"), 1) == seed_and_value(sae("pw"), 1)

    def test_sae_identity_order(self):
        assert seed_and_value(sae("pw", A, B), 3) == seed_and_value(sae("pw", B, A), 3)

    def test_eap_identity_order_matters(self):
        c1 = DerivationContext(Variant.EAP_PWD, A, B, b"pw", token=b"abcd")
        c2 = DerivationContext(Variant.EAP_PWD, B, A, b"pw", token=b"abcd")
        assert seed_and_value(c1, 1) != seed_and_value(c2, 1)

    def test_counter_changes_output(self):
        assert seed_and_value(sae("pw"), 1)[1] != seed_and_value(sae("pw"), 2)[1]

    def test_parity_is_seed_lsb(self):
        seed, _, bit = seed_and_value(sae("pw"), 1)
        assert bit == seed[-1] & 1

    def test_counter_starts_at_one(self):
        with pytest.raises(ValueError):
            seed_and_value(sae("pw"), 0)

    def test_qr_pass_rate(self):
        n = 10_000
        hits = 0
        for i in range(n // 4):
            ctx = sae(f"rate{i}")
            for c in range(1, 5):
                v = seed_and_value(ctx, c)[1]
                hits += v < P256.p and legendre_naive(P256.rhs(v), P256.p) == 1
        assert abs(hits / n - 0.5) <= 0.02


class TestDerive:
    @pytest.mark.parametrize("variant", ["sae", "eap"])
    def test_element_on_curve_and_parity(self, variant):
        rng = random.Random(1)
        for i in range(20):
            ctx = sae(f"p{i}") if variant == "sae" else eap(f"p{i}")
            res = derive_pwe(ctx, rng=rng)
            assert res.found
            assert P256.is_on_curve(res.element)
            _, x, bit = seed_and_value(ctx, res.success_iteration)
            assert res.element.x == x
            assert res.element.y & 1 == bit

    def test_mode_equivalence(self):
        rng = random.Random(2)
        for i in range(50):
            ctx = sae(rng.randbytes(8).hex(), random_mac(rng), random_mac(rng))
            v = derive_pwe(ctx, rng=rng)
            h = derive_pwe(ctx.with_mode("hardened"), rng=rng)
            assert (v.element, v.success_iteration) == (h.element, h.success_iteration)
            e = eap(rng.randbytes(8).hex(), rng.randbytes(4))
            assert derive_pwe(e, rng=rng).element == derive_pwe(e.with_mode("hardened"),
                                                                rng=rng).element

    def test_rng_does_not_change_element(self):
        ctx = sae("pw")
        assert derive_pwe(ctx, rng=random.Random(1)).element == \
            derive_pwe(ctx, rng=random.Random(2)).element

    def test_sae_symmetry(self):
        assert derive_pwe(sae("pw", A, B)).element == derive_pwe(sae("pw", B, A)).element

    def test_sae_runs_all_iterations(self):
        res = derive_pwe(sae("pw"), rng=random.Random(0))
        assert res.iterations_executed == 20
        assert len(res.outcome_log) == 20
        firsts = [r for r in res.outcome_log if r.was_first_success]
        assert len(firsts) == 1 and firsts[0].counter == res.success_iteration
        assert all(r.dummy for r in res.outcome_log if r.counter > res.success_iteration)

    def test_eap_exits_early(self):
        res = derive_pwe(eap("pw"), rng=random.Random(0))
        assert res.iterations_executed == res.success_iteration
        assert len(res.outcome_log) == res.success_iteration

    def test_not_found(self):
        pw = find_password(2, lambda p: sae(p))
        res = derive_pwe(sae(pw, k_max=1), rng=random.Random(0))
        assert not res.found and res.element is None and res.iterations_executed == 1
        res = derive_pwe(sae(pw, mode="hardened", k_max=1), rng=random.Random(0))
        assert not res.found

    def test_eap_ceiling(self):
        assert EAP_PWD_CEILING == 256

    def test_token_changes_iteration_distribution(self):
        pw = "tokentest"
        ks = {derive_pwe(eap(pw, bytes([i, 0, 0, 0])), rng=random.Random(0)).success_iteration
              for i in range(40)}
        assert len(ks) > 1

    def test_count_iterations_agrees(self):
        rng = random.Random(3)
        for i in range(30):
            a, b = random_mac(rng), random_mac(rng)
            res = derive_pwe(sae(f"c{i}", a, b), rng=rng)
            assert count_iterations(f"c{i}".encode(), a, b) == res.success_iteration


@pytest.fixture(scope="module")
def counts():
    rng = random.Random(42)
    ks = [count_iterations(rng.randbytes(8), random_mac(rng), random_mac(rng), limit=64)
          for _ in range(TestIterationDistribution.N)]
    return Counter(ks)


class TestIterationDistribution:
    N = 10_000

    @pytest.mark.parametrize("k", range(1, 9))
    def test_pmf_within_three_se(self, counts, k):
        p = 2.0 ** -k
        se = math.sqrt(p * (1 - p) / self.N)
        assert abs(counts[k] / self.N - p) <= 3 * se

    @pytest.mark.parametrize("j", range(1, 11))
    def test_tail(self, counts, j):
        p = 2.0 ** -j
        tail = sum(v for k, v in counts.items() if k > j) / self.N
        se = math.sqrt(p * (1 - p) / self.N)
        assert abs(tail - p) <= 4 * se


class TestFingerprint:
    def test_hardened_constant(self):
        rng = random.Random(5)
        prints = {operation_trace_fingerprint(sae(f"h{i}", random_mac(rng), random_mac(rng),
                                                  "hardened"), rng) for i in range(30)}
        assert len(prints) == 1

    def test_hardened_per_iteration_shape(self):
        sink = EventSink()
        derive_pwe(sae("pw", mode="hardened"), sink, random.Random(0))
        iters = sink.iterations()
        assert len(iters) == 20
        assert all(it == iters[0] for it in iters)
        assert EventKind.SUCCESS_BLOCK not in sink.kinds()

    def test_vulnerable_success_block_position(self):
        p1 = find_password(1, lambda p: sae(p))
        p4 = find_password(4, lambda p: sae(p))
        f1 = operation_trace_fingerprint(sae(p1), random.Random(0))
        f4 = operation_trace_fingerprint(sae(p4), random.Random(0))
        assert f1 != f4
        sb = EventKind.SUCCESS_BLOCK.value

        def iteration_of_success(fp):
            return fp[:fp.index(sb)].count(EventKind.ITERATION_START.value)

        assert iteration_of_success(f1) == 1
        assert iteration_of_success(f4) == 4
        assert fp_count(f1, sb) == fp_count(f4, sb) == 1

    def test_eap_length_grows_with_success(self):
        p1 = find_password(1, lambda p: eap(p))
        p3 = find_password(3, lambda p: eap(p))
        f1 = operation_trace_fingerprint(eap(p1), random.Random(0))
        f3 = operation_trace_fingerprint(eap(p3), random.Random(0))
        assert f1.count(EventKind.ITERATION_START.value) == 1
        assert f3.count(EventKind.ITERATION_START.value) == 3
        assert len(f3) > len(f1)


def fp_count(fp, kind):
    return sum(1 for k in fp if k == kind)


class TestScan:
    def test_threshold_zero_returns_all(self):
        words = [f"w{i}" for i in range(50)]
        hits = scan_high_iteration(words, A, B, 0)
        assert [w for w, _ in hits] == words

    def test_counts_are_correct(self):
        words = [f"s{i}" for i in range(300)]
        for w, k in scan_high_iteration(words, A, B, 3):
            assert k > 3
            assert derive_pwe(DerivationContext(Variant.SAE, A, B, w.encode(), k_max=64),
                              rng=random.Random(0)).success_iteration == k

    def test_limit_reports_none(self):
        hits = scan_high_iteration([f"n{i}" for i in range(200)], A, B, 1, limit=1)
        assert hits and all(k is None for _, k in hits)

    def test_negative_threshold(self):
        with pytest.raises(ValueError):
            scan_high_iteration(["x"], A, B, -1)

    def test_hit_density_threshold_10(self):
        # 1e5 words: expected 1e5 / 1024 hits, checked at 3 standard deviations
        rng = random.Random(10)
        n = 100_000
        words = [rng.randbytes(6).hex() for _ in range(n)]
        hits = len(scan_high_iteration(words, A, B, 10, limit=10))
        mean = n / 1024
        assert abs(hits - mean) <= 3 * math.sqrt(mean)

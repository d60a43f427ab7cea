"""Acceptance criteria, one test per criterion.

Run on its own with ``python3 -m pytest tests/test_acceptance.py`` (or
``python3 tests/test_acceptance.py``); the terminal summary prints one
PASS/FAIL line per criterion.
"""

import random
import sys
import time
from fractions import Fraction

import pytest

from oracles import hmac_sha256_rfc2104, simulated_handshake_us, tag_input
from oobtoken.cache import TokenOrigin
from oobtoken.dns import (
    CachingForwarder,
    DnsQuery,
    Resolver,
    ResolverConfig,
    RType,
    ZoneEntry,
    resolve,
)
from oobtoken.endpoint import Client, Server, ServerConfig, TokenUse, run_handshake
from oobtoken.keys import KeyRecord, KeyRegistry
from oobtoken.netsim import (
    Mechanism,
    analytic_default,
    analytic_proposal,
    chain_savings,
    load_bundled,
    overhead_ratio,
    run,
    single_connection,
    sweep,
    website_savings,
)
from oobtoken.tokens import (
    TOKEN_LENGTH,
    CanonicalAddress,
    Family,
    ValidationToken,
    Verdict,
    encode_token,
    issue_token,
    validate_token,
)

RTTS = (0, 1, 30, 45, 90, 137, 300)


def test_criterion_1_simulation_equals_analytic_model():
    started = time.perf_counter()
    for rtt in RTTS:
        for t_proc in (0, 40):
            default = run(single_connection(rtt, t_proc, Mechanism.NONE), paired=False).transcripts[0]
            proposal = run(single_connection(rtt, t_proc, Mechanism.DNS_TOKEN), paired=False).transcripts[0]
            assert default.retried and default.completion_time == analytic_default(rtt, t_proc)
            assert not proposal.retried and proposal.completion_time == analytic_proposal(rtt, t_proc)
            # the hand-walked timeline agrees too
            assert default.completion_time == simulated_handshake_us(rtt, t_proc, True)
            assert proposal.completion_time == simulated_handshake_us(rtt, t_proc, False)
    assert time.perf_counter() - started < 1.0


def test_criterion_2_sixty_percent_at_90ms():
    ratio = overhead_ratio(90, 40)
    assert ratio == Fraction(130, 220)
    assert 0.59 <= ratio <= 0.60
    row = next(r for r in sweep([90], 40) if r.mechanism is Mechanism.DNS_TOKEN)
    assert row.ratio == ratio


def test_criterion_3_fifty_percent_asymptote():
    assert Fraction(1, 2) <= overhead_ratio(10**6, 40) <= Fraction("0.50003")
    rows = [r for r in sweep(range(0, 301, 30), 40) if r.mechanism is Mechanism.DNS_TOKEN]
    ratios = [r.ratio for r in rows]
    assert all(a > b for a, b in zip(ratios, ratios[1:]))


def test_criterion_4_website_savings():
    assert website_savings(Fraction("4.04"), 90) == Fraction("363.6")
    assert chain_savings(4, 90) == 360


def _random_address(rng):
    if rng.random() < 0.5:
        return CanonicalAddress(Family.V4, rng.randbytes(4))
    return CanonicalAddress(Family.V6, rng.randbytes(16))


def test_criterion_5_token_properties():
    started = time.perf_counter()
    rng = random.Random(5)

    # (a) round trip
    for _ in range(10_000):
        key = KeyRecord(rng.randbytes(4), rng.randbytes(32), "e")
        ip = _random_address(rng)
        lifetime = rng.randrange(1, 1 << 32)
        now = rng.randrange(0, 1 << 48)
        data = encode_token(issue_token(key, ip, now, lifetime, rng.randbytes))
        later = now + rng.randrange(0, lifetime * 1000)
        assert validate_token({key.key_id: key}.get, data, ip, later) is Verdict.VALID

    key = KeyRecord(b"\x00\x00\x00\x01", bytes(range(32)), "e")
    ip = CanonicalAddress.parse("192.0.2.1")
    look = {key.key_id: key}.get
    data = encode_token(issue_token(key, ip, 1000, 600, rng.randbytes))

    # (b) every single-bit mutation across all 45 bytes: 360 variants
    mutations = 0
    for pos in range(TOKEN_LENGTH):
        for bit in range(8):
            mutated = bytearray(data)
            mutated[pos] ^= 1 << bit
            assert validate_token(look, bytes(mutated), ip, 1001) is not Verdict.VALID
            mutations += 1
    assert mutations == 360

    # (c) expiry boundary
    assert validate_token(look, data, ip, 1000 + 600_000 - 1) is Verdict.VALID
    assert validate_token(look, data, ip, 1000 + 600_000) is Verdict.EXPIRED

    # (d) address mismatch
    for _ in range(1000):
        other = _random_address(rng)
        if other != ip:
            assert validate_token(look, data, other, 1001) is not Verdict.VALID

    # (e) after revocation
    reg = KeyRegistry(rng.randbytes)
    recs = [reg.register(f"e{i}") for i in range(20)]
    tokens = [encode_token(issue_token(r, ip, 0, 600, rng.randbytes)) for r in recs]
    for r in recs:
        reg.revoke(r.key_id)
    for t in tokens:
        assert validate_token(reg.lookup, t, ip, 1) is Verdict.REVOKED

    assert time.perf_counter() - started < 5.0


def _invalid_token(kind, rng, local, revoked, client_ip):
    other_ip = CanonicalAddress.parse("198.51.100.1")
    if kind == "wrong_address":
        return encode_token(issue_token(local, other_ip, 0, 600, rng.randbytes))
    if kind == "unknown_key":
        stranger = KeyRecord(b"\xff\xff\xff\xff", rng.randbytes(32), "x")
        return encode_token(issue_token(stranger, client_ip, 0, 600, rng.randbytes))
    if kind == "forged_tag":
        return encode_token(ValidationToken(local.key_id, 0, 600, rng.randbytes(12), rng.randbytes(16)))
    if kind == "revoked":
        return revoked
    if kind == "expired":
        return encode_token(issue_token(local, client_ip, 0, 1, rng.randbytes))
    if kind == "malformed":
        return rng.randbytes(rng.choice([1, 44, 46]))
    raise AssertionError(kind)


def test_criterion_6_invalid_token_behaves_like_no_token():
    rng = random.Random(6)
    kinds = ("wrong_address", "unknown_key", "forged_tag", "revoked", "expired", "malformed")

    def server():
        reg = KeyRegistry(random.Random(60).randbytes)
        local = reg.register("www.example#local")
        share = reg.register("resolver")
        return Server(ServerConfig("www.example", (local,)), reg, "203.0.113.10", rng.randbytes), reg, local, share

    baseline_srv = server()[0]
    baseline = run_handshake(Client("192.0.2.7"), baseline_srv, "www.example", rtt_ms=90, t_proc_ms=40)
    assert baseline.round_trips == 2

    for i in range(100):
        srv, reg, local, share = server()
        client = Client("192.0.2.7")
        revoked = encode_token(issue_token(share, client.address, 0, 600, rng.randbytes))
        reg.revoke(share.key_id)
        bad = _invalid_token(kinds[i % len(kinds)], rng, local, revoked, client.address)
        # hand the token straight to the client, bypassing the cache's own checks
        pending = [(bad, TokenOrigin.OUT_OF_BAND)]
        client.cache.select = lambda host, now: pending.pop() if pending else None
        tr = run_handshake(client, srv, "www.example", now=10_000, rtt_ms=90, t_proc_ms=40)
        assert tr.verdict is not Verdict.VALID
        assert tr.shape() == baseline.shape(), kinds[i % len(kinds)]
        assert tr.completion_time == baseline.completion_time


def test_criterion_7_hmac_known_answers():
    # fixed before the implementation existed, from the hand-written HMAC in tests/oracles.py
    vectors = [
        (bytes(range(32)), "00000001", 1, 600, bytes(12), "192.0.2.1", "d1fd4e99d1cf2079aa79a5744c39f6c8"),
        (b"\xaa" * 32, "deadbeef", 1_700_000_000_000, 600, bytes(range(1, 13)), "203.0.113.77",
         "0b041b669d17a16da7f97e05c353fdf5"),
        (bytes.fromhex("0b" * 20 + "00" * 12), "0a0b0c0d", 2**64 - 1, 2**32 - 1, b"\xff" * 12, "10.0.0.7",
         "43e5cee4e3127f0ef39a2e3a6ac0a3e1"),
    ]
    for secret, kid, iat, ttl, nonce, ip, expected in vectors:
        key = KeyRecord(bytes.fromhex(kid), secret, "kat")
        token = issue_token(key, CanonicalAddress.parse(ip), iat, ttl, lambda n: nonce)
        assert token.tag.hex() == expected
        packed = bytes([4]) + bytes(int(o) for o in ip.split("."))
        assert hmac_sha256_rfc2104(secret, tag_input(1, key.key_id, iat, ttl, nonce, packed))[:16].hex() == expected


def test_criterion_8_dns_semantics():
    reg = KeyRegistry(random.Random(8).randbytes)
    share = reg.register("resolver")
    zone = {"www.example": ZoneEntry(("203.0.113.10", "2001:db8::10"), 300),
            "plain.example": ZoneEntry(("203.0.113.20",), 60)}
    cfg = ResolverConfig(zone, {"www.example": share.copy_for_issuer()})
    upstream = Resolver(cfg, random.Random(80).randbytes)
    client_ip = CanonicalAddress.parse("192.0.2.7")

    for i in range(200):
        resp = upstream.resolve(DnsQuery("www.example", client_ip), i)
        assert all(r.ttl_seconds == 0 for r in resp.answers if r.rtype is RType.QUICTOKEN)
        assert len(resp.tokens()) == 1

    fwd = CachingForwarder(CachingForwarder(upstream))
    for now in range(0, 900_000, 7_000):
        before = upstream.queries
        resp = fwd.resolve(DnsQuery("www.example", client_ip), now)
        if upstream.queries == before:
            assert resp.tokens() == []

    plain = ResolverConfig(zone, {}, token_support=False)
    for host in zone:
        q = DnsQuery(host, client_ip)
        with_tokens = [r for r in resolve(q, cfg, 0, random.Random(1).randbytes).answers
                       if r.rtype is not RType.QUICTOKEN]
        assert with_tokens == list(resolve(q, plain, 0).answers)

    report = run(load_bundled("nat_mismatch"), paired=False)
    (tr,) = report.transcripts
    cfg_nat = load_bundled("nat_mismatch")
    assert tr.retried and tr.round_trips == 2 and tr.token_origin_used is TokenUse.OUT_OF_BAND
    assert [k for k in tr.kinds() if k.endswith("Retry")] == ["s2c:Retry"]
    assert tr.completion_time == cfg_nat.t_proc_ms + 2 * cfg_nat.rtt_ms


def test_criterion_9_spoofing_revokes_exactly_one_key():
    report = run(load_bundled("dos_revocation"), paired=False)
    assert len(report.events) == 1
    (ev,) = report.events
    assert ev.kind == "revocation" and ev.owner == "isp-resolver" and ev.spoof_count == 101

    after = report.result("alice-after").transcript
    assert after.retried and after.verdict is Verdict.REVOKED
    assert after.token_origin_used is TokenUse.OUT_OF_BAND
    assert bytes.fromhex(ev.key_id) == after.messages[0].token_bytes[1:5]

    bob = report.result("bob-after").transcript
    assert bob.round_trips == 1 and bob.verdict is Verdict.VALID


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))

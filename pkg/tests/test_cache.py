from hypothesis import given, strategies as st

from oobtoken.cache import TokenCache, TokenOrigin
from oobtoken.keys import KeyRecord
from oobtoken.tokens import CanonicalAddress, encode_token, issue_token

KEY = KeyRecord(b"kid1", bytes(32), "e")
IP = CanonicalAddress.parse("192.0.2.7")
SI, OOB = TokenOrigin.SERVER_ISSUED, TokenOrigin.OUT_OF_BAND


def token(now=0, lifetime=600, tag=0):
    return encode_token(issue_token(KEY, IP, now, lifetime, lambda n: bytes([tag]) * n))


def test_store_then_select():
    c = TokenCache()
    t = token()
    c.store("a.example", t, OOB, 0)
    assert c.select("a.example", 1) == (t, OOB)


def test_expired_token_dropped():
    c = TokenCache()
    assert not c.store("a.example", token(lifetime=1), OOB, 1000)
    assert c.select("a.example", 1000) is None
    assert c.stats["dropped_expired"] == 1


def test_malformed_dropped():
    c = TokenCache()
    assert not c.store("a.example", b"junk", OOB, 0)
    assert c.stats["dropped_malformed"] == 1


def test_newer_replaces_older():
    c = TokenCache()
    old, new = token(now=0, tag=1), token(now=5, tag=2)
    c.store("a.example", old, SI, 5)
    c.store("a.example", new, SI, 5)
    assert c.select("a.example", 6) == (new, SI)
    # and an older arrival does not clobber a newer one
    c.store("a.example", new, SI, 6)
    assert not c.store("a.example", old, SI, 6)
    assert c.select("a.example", 6) == (new, SI)


def test_preference_and_single_use():
    c = TokenCache()
    oob, si = token(tag=1), token(tag=2)
    c.store("a.example", oob, OOB, 0)
    c.store("a.example", si, SI, 0)
    assert c.select("a.example", 1) == (si, SI)
    assert c.select("a.example", 1) == (oob, OOB)
    assert c.select("a.example", 1) is None


def test_only_out_of_band():
    c = TokenCache()
    c.store("a.example", token(), OOB, 0)
    assert c.select("a.example", 0)[1] is OOB


def test_selection_never_returns_expired():
    c = TokenCache()
    c.store("a.example", token(lifetime=1), SI, 0)
    c.store("a.example", token(lifetime=600, tag=3), OOB, 0)
    # server-issued has expired, so the out-of-band token is next in line
    assert c.select("a.example", 1000)[1] is OOB


def test_purge_empty_and_boundary():
    assert TokenCache().purge_expired(0) == 0
    c = TokenCache()
    c.store("a.example", token(lifetime=1), SI, 0)
    assert c.purge_expired(1000) == 1
    assert len(c) == 0


def test_purge_staggered():
    c = TokenCache()
    for i in range(10):
        c.store(f"h{i}.example", token(lifetime=i + 1, tag=i), OOB, 0)
    expiries = sorted(e.expires_at for e in c.entries())
    median = (expiries[4] + expiries[5]) // 2
    expected = sum(1 for e in expiries if e <= median)
    assert expected == 5
    assert c.purge_expired(median) == 5
    assert len(c) == 5


@given(st.permutations([("a", SI), ("a", OOB), ("b", OOB), ("b", SI)]))
def test_preference_any_insertion_order(order):
    c = TokenCache()
    for i, (host, origin) in enumerate(order):
        c.store(host, token(tag=i), origin, 0)
    assert c.select("a", 1)[1] is SI
    assert c.select("b", 1)[1] is SI


@given(st.lists(st.tuples(st.sampled_from(["store_si", "store_oob", "select", "purge"]), st.integers(0, 3000)), max_size=40))
def test_no_resurrection(ops):
    c = TokenCache()
    gone = set()
    now = 0
    for i, (op, dt) in enumerate(ops):
        now += dt
        if op.startswith("store"):
            c.store("h", token(now=now, lifetime=2, tag=i % 256), SI if op == "store_si" else OOB, now)
        elif op == "select":
            got = c.select("h", now)
            if got is not None:
                assert got[0] not in gone
                gone.add(got[0])
        else:
            c.purge_expired(now)


def test_dump():
    c = TokenCache()
    t = token()
    c.store("a.example", t, OOB, 0)
    assert c.dump() == f"a.example OutOfBand 600000 {t.hex()}\n"

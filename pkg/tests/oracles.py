"""Independent reference computations used to freeze expected test values.

Nothing here imports from ``oobtoken``.
"""

import hashlib
import struct
from fractions import Fraction

_BLOCK = 64


def hmac_sha256_rfc2104(key: bytes, message: bytes) -> bytes:
    """HMAC-SHA-256 built from the RFC 2104 construction on bare hashlib."""
    if len(key) > _BLOCK:
        key = hashlib.sha256(key).digest()
    key = key.ljust(_BLOCK, b"\x00")
    ipad = bytes(b ^ 0x36 for b in key)
    opad = bytes(b ^ 0x5C for b in key)
    inner = hashlib.sha256(ipad + message).digest()
    return hashlib.sha256(opad + inner).digest()


def assemble_token(version, key_id, issued_at, lifetime, nonce, tag) -> bytes:
    """Hand-assembled wire buffer, one field at a time."""
    buf = bytearray()
    buf.append(version)
    buf += key_id
    buf += issued_at.to_bytes(8, "big")
    buf += lifetime.to_bytes(4, "big")
    buf += nonce
    buf += tag
    return bytes(buf)


def canonical_ipv4(dotted: str) -> bytes:
    return b"\x04" + bytes(int(p) for p in dotted.split("."))


def tag_input(version, key_id, issued_at, lifetime, nonce, address_bytes) -> bytes:
    return (
        struct.pack(">B", version)
        + key_id
        + struct.pack(">Q", issued_at)
        + struct.pack(">I", lifetime)
        + nonce
        + address_bytes
    )


def simulated_handshake_us(rtt_ms, t_proc_ms, retried: bool) -> Fraction:
    """Walk the message timeline by hand, in microseconds, and return ms."""
    one_way = Fraction(rtt_ms) * 1000 / 2
    t = Fraction(0)
    t += one_way            # Initial reaches server
    if retried:
        t += one_way        # Retry back at client
        t += one_way        # second Initial at server
    t += Fraction(t_proc_ms) * 1000
    t += one_way            # server flight at client
    return t / 1000

"""Address-validation token wire format, issuance and validation.

A token binds a client source address to an issuer key. Its 45-byte layout
(all integers big-endian) is::

    version(1) | key_id(4) | issued_at_ms(8) | lifetime_s(4) | nonce(12) | tag(16)

The tag is the first 16 bytes of HMAC-SHA-256 keyed with the issuer secret
over every preceding field followed by the canonical client address.
"""

from __future__ import annotations

import enum
import hashlib
import hmac
import ipaddress
import os
import struct
from dataclasses import dataclass
from typing import TYPE_CHECKING, Callable, Optional, Union

if TYPE_CHECKING:
    from .keys import KeyRecord

TOKEN_VERSION = 1
TOKEN_LENGTH = 45
NONCE_LENGTH = 12
TAG_LENGTH = 16
KEY_ID_LENGTH = 4
DEFAULT_LIFETIME_S = 600

_HEADER = struct.Struct(">B4sQI12s")

NonceSource = Callable[[int], bytes]
KeyLookup = Callable[[bytes], Optional["KeyRecord"]]


class MalformedToken(ValueError):
    pass


class RevokedKey(Exception):
    pass


class Family(enum.Enum):
    V4 = 4
    V6 = 6


@dataclass(frozen=True)
class CanonicalAddress:
    family: Family
    packed: bytes

    def __post_init__(self):
        want = 4 if self.family is Family.V4 else 16
        if len(self.packed) != want:
            raise ValueError(f"{self.family.name} address needs {want} bytes, got {len(self.packed)}")

    @classmethod
    def parse(cls, text: Union[str, "CanonicalAddress"]) -> "CanonicalAddress":
        if isinstance(text, CanonicalAddress):
            return text
        ip = ipaddress.ip_address(text)
        family = Family.V4 if ip.version == 4 else Family.V6
        return cls(family, ip.packed)

    def encode(self) -> bytes:
        return bytes([self.family.value]) + self.packed

    def __str__(self) -> str:
        return str(ipaddress.ip_address(self.packed))


@dataclass(frozen=True)
class ValidationToken:
    key_id: bytes
    issued_at: int
    lifetime: int
    nonce: bytes
    tag: bytes
    version: int = TOKEN_VERSION

    def __post_init__(self):
        if len(self.key_id) != KEY_ID_LENGTH:
            raise ValueError("key_id must be 4 bytes")
        if len(self.nonce) != NONCE_LENGTH:
            raise ValueError("nonce must be 12 bytes")
        if len(self.tag) != TAG_LENGTH:
            raise ValueError("tag must be 16 bytes")
        if not 0 <= self.version < 1 << 8:
            raise ValueError("version out of range")
        if not 0 <= self.issued_at < 1 << 64:
            raise ValueError("issued_at out of range")
        if not 0 <= self.lifetime < 1 << 32:
            raise ValueError("lifetime out of range")

    @property
    def expires_at(self) -> int:
        return self.issued_at + self.lifetime * 1000

    def signed_fields(self) -> bytes:
        return _HEADER.pack(self.version, self.key_id, self.issued_at, self.lifetime, self.nonce)

    def render(self) -> str:
        return (
            f"v{self.version} kid={self.key_id.hex()} iat={self.issued_at} "
            f"ttl={self.lifetime} nonce={self.nonce.hex()} tag={self.tag.hex()}"
        )


class Verdict(enum.Enum):
    VALID = "Valid"
    MALFORMED = "Malformed"
    UNKNOWN_KEY = "UnknownKey"
    REVOKED = "Revoked"
    INVALID_SIGNATURE = "InvalidSignature"
    EXPIRED = "Expired"
    ADDRESS_MISMATCH = "AddressMismatch"

    @property
    def ok(self) -> bool:
        return self is Verdict.VALID

    def __str__(self) -> str:
        return self.value


def encode_token(token: ValidationToken) -> bytes:
    return token.signed_fields() + token.tag


def decode_token(data: bytes) -> ValidationToken:
    """Parse a wire token, raising :class:`MalformedToken` on bad length or version."""
    if len(data) != TOKEN_LENGTH:
        raise MalformedToken(f"token must be {TOKEN_LENGTH} bytes, got {len(data)}")
    version, key_id, issued_at, lifetime, nonce = _HEADER.unpack_from(data)
    if version != TOKEN_VERSION:
        raise MalformedToken(f"unknown token version {version}")
    return ValidationToken(key_id, issued_at, lifetime, nonce, bytes(data[_HEADER.size:]), version)


def compute_tag(secret: bytes, signed_fields: bytes, address: CanonicalAddress) -> bytes:
    mac = hmac.new(secret, signed_fields + address.encode(), hashlib.sha256)
    return mac.digest()[:TAG_LENGTH]


def issue_token(
    key: "KeyRecord",
    client: CanonicalAddress,
    now: int,
    lifetime: int = DEFAULT_LIFETIME_S,
    nonce_source: NonceSource = os.urandom,
) -> ValidationToken:
    if key.revoked:
        raise RevokedKey(f"key {key.key_id.hex()} is revoked")
    nonce = nonce_source(NONCE_LENGTH)
    if len(nonce) != NONCE_LENGTH:
        raise ValueError("nonce source must yield 12 bytes")
    unsigned = ValidationToken(key.key_id, now, lifetime, nonce, bytes(TAG_LENGTH))
    tag = compute_tag(key.secret, unsigned.signed_fields(), client)
    return ValidationToken(key.key_id, now, lifetime, nonce, tag)


def validate_token(
    key_lookup: KeyLookup,
    data: bytes,
    claimed: CanonicalAddress,
    now: int,
    true_address: Optional[CanonicalAddress] = None,
) -> Verdict:
    """Check a presented token against the address the server observes.

    Checks run in the order Malformed, UnknownKey, Revoked, InvalidSignature,
    Expired. A server cannot tell a forged tag from one bound to another
    address, so tag mismatches are InvalidSignature. Only a caller that knows
    the address the token was really issued for (the simulator) may pass
    ``true_address`` to get AddressMismatch instead.
    """
    try:
        token = decode_token(data)
    except MalformedToken:
        return Verdict.MALFORMED
    key = key_lookup(token.key_id)
    if key is None:
        return Verdict.UNKNOWN_KEY
    if key.revoked:
        return Verdict.REVOKED
    signed = token.signed_fields()
    if not hmac.compare_digest(compute_tag(key.secret, signed, claimed), token.tag):
        if (
            true_address is not None
            and true_address != claimed
            and hmac.compare_digest(compute_tag(key.secret, signed, true_address), token.tag)
        ):
            return Verdict.ADDRESS_MISMATCH
        return Verdict.INVALID_SIGNATURE
    if now >= token.expires_at:
        return Verdict.EXPIRED
    return Verdict.VALID


def render(data: bytes) -> str:
    return decode_token(data).render()

"""Per-entity issuer keys with revocation and spoofed-request monitoring."""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Callable, Dict, Iterator, List, Optional, TextIO

KEY_LENGTH = 32
DEFAULT_SPOOF_THRESHOLD = 100

KeySource = Callable[[int], bytes]


class UnknownKeyError(KeyError):
    pass


@dataclass
class KeyRecord:
    key_id: bytes
    secret: bytes
    owner_entity: str
    revoked: bool = False
    spoof_count: int = 0
    spoof_threshold: int = DEFAULT_SPOOF_THRESHOLD

    def copy_for_issuer(self) -> "KeyRecord":
        """A detached copy handed to an external issuer; later revocations do not reach it."""
        return KeyRecord(self.key_id, self.secret, self.owner_entity, spoof_threshold=self.spoof_threshold)


@dataclass(frozen=True)
class RevocationEvent:
    key_id: bytes
    owner_entity: str
    spoof_count: int


class KeyRegistry:
    """Keys a server operator has created for itself and for trusted issuers.

    Records are never deleted. A revoked key stays resolvable so tokens under
    it produce a definite Revoked verdict.
    """

    def __init__(self, key_source: Optional[KeySource] = None):
        self._key_source = key_source or os.urandom
        self._records: Dict[bytes, KeyRecord] = {}

    def __len__(self) -> int:
        return len(self._records)

    def __iter__(self) -> Iterator[KeyRecord]:
        return iter(self._records.values())

    def __contains__(self, key_id: bytes) -> bool:
        return key_id in self._records

    def register(
        self,
        owner_entity: str,
        key_source: Optional[KeySource] = None,
        spoof_threshold: int = DEFAULT_SPOOF_THRESHOLD,
    ) -> KeyRecord:
        if not owner_entity or any(c.isspace() for c in owner_entity):
            raise ValueError(f"owner entity must be a non-empty token without whitespace: {owner_entity!r}")
        if spoof_threshold < 0:
            raise ValueError("spoof_threshold must be >= 0")
        source = key_source or self._key_source
        key_id = source(4)
        while key_id in self._records:
            key_id = source(4)
        record = KeyRecord(key_id, source(KEY_LENGTH), owner_entity, spoof_threshold=spoof_threshold)
        self._records[key_id] = record
        return record

    def add(self, record: KeyRecord) -> None:
        if record.key_id in self._records:
            raise ValueError(f"duplicate key id {record.key_id.hex()}")
        self._records[record.key_id] = record

    def lookup(self, key_id: bytes) -> Optional[KeyRecord]:
        return self._records.get(key_id)

    def _require(self, key_id: bytes) -> KeyRecord:
        record = self._records.get(key_id)
        if record is None:
            raise UnknownKeyError(key_id.hex())
        return record

    def revoke(self, key_id: bytes) -> None:
        self._require(key_id).revoked = True

    def revoked_ids(self) -> List[bytes]:
        return [r.key_id for r in self._records.values() if r.revoked]

    def record_unrequited(self, key_id: bytes) -> Optional[RevocationEvent]:
        """Count one validated request that never completed its handshake.

        Revokes the key on the first increment that strictly exceeds its
        threshold. Counts against an already revoked key are ignored.
        """
        record = self._require(key_id)
        if record.revoked:
            return None
        record.spoof_count += 1
        if record.spoof_count > record.spoof_threshold:
            record.revoked = True
            return RevocationEvent(record.key_id, record.owner_entity, record.spoof_count)
        return None

    # text export: one line per key, secrets kept in a separate file

    def export(self, registry_out: TextIO, secrets_out: Optional[TextIO] = None) -> None:
        for r in self._records.values():
            registry_out.write(f"{r.key_id.hex()} {r.owner_entity} {str(r.revoked).lower()} {r.spoof_count}\n")
            if secrets_out is not None:
                secrets_out.write(f"{r.key_id.hex()} {r.secret.hex()}\n")

    @classmethod
    def load(
        cls,
        secrets_in: TextIO,
        registry_in: Optional[TextIO] = None,
        spoof_threshold: int = DEFAULT_SPOOF_THRESHOLD,
    ) -> "KeyRegistry":
        """Rebuild a registry from a secrets file and, optionally, its state file.

        Keys absent from the state file get owner ``unknown`` and a clean state.
        """
        secrets = {}
        for lineno, line in _lines(secrets_in):
            parts = line.split()
            if len(parts) != 2:
                raise ValueError(f"secrets line {lineno}: expected 'key_id_hex secret_hex'")
            key_id, secret = _hex(parts[0], 4, lineno), _hex(parts[1], None, lineno)
            secrets[key_id] = secret
        reg = cls()
        state = {}
        if registry_in is not None:
            for lineno, line in _lines(registry_in):
                parts = line.split()
                if len(parts) != 4 or parts[2] not in ("true", "false") or not parts[3].isdigit():
                    raise ValueError(f"registry line {lineno}: expected 'key_id_hex owner revoked spoof_count'")
                state[_hex(parts[0], 4, lineno)] = (parts[1], parts[2] == "true", int(parts[3]))
        for key_id, secret in secrets.items():
            owner, revoked, count = state.get(key_id, ("unknown", False, 0))
            reg.add(KeyRecord(key_id, secret, owner, revoked, count, spoof_threshold))
        return reg


def _lines(stream: TextIO):
    for lineno, raw in enumerate(stream, 1):
        line = raw.strip()
        if line and not line.startswith("#"):
            yield lineno, line


def _hex(text: str, length: Optional[int], lineno: int) -> bytes:
    try:
        value = bytes.fromhex(text)
    except ValueError:
        raise ValueError(f"line {lineno}: bad hex {text!r}") from None
    if length is not None and len(value) != length:
        raise ValueError(f"line {lineno}: expected {length} bytes, got {len(value)}")
    return value

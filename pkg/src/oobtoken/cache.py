"""Client-side token cache with origin marking and the first-party preference rule."""

from __future__ import annotations

import enum
from collections import Counter
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

from .tokens import MalformedToken, decode_token


class TokenOrigin(enum.Enum):
    SERVER_ISSUED = "ServerIssued"
    OUT_OF_BAND = "OutOfBand"

    def __str__(self) -> str:
        return self.value


# selection order: first-party tokens always win
_PREFERENCE = (TokenOrigin.SERVER_ISSUED, TokenOrigin.OUT_OF_BAND)


@dataclass(frozen=True)
class CachedToken:
    hostname: str
    token_bytes: bytes
    origin: TokenOrigin
    issued_at: int
    expires_at: int


class TokenCache:
    """One slot per (hostname, origin); tokens are consumed when selected."""

    def __init__(self):
        self._slots: Dict[Tuple[str, TokenOrigin], CachedToken] = {}
        self.stats: Counter = Counter()

    def __len__(self) -> int:
        return len(self._slots)

    def store(self, hostname: str, token_bytes: bytes, origin: TokenOrigin, now: int) -> bool:
        """Cache a token; returns False if it was dropped as malformed, expired or stale."""
        try:
            token = decode_token(token_bytes)
        except MalformedToken:
            self.stats["dropped_malformed"] += 1
            return False
        if now >= token.expires_at:
            self.stats["dropped_expired"] += 1
            return False
        slot = (hostname, origin)
        held = self._slots.get(slot)
        if held is not None and held.issued_at > token.issued_at:
            self.stats["dropped_stale"] += 1
            return False
        self._slots[slot] = CachedToken(hostname, bytes(token_bytes), origin, token.issued_at, token.expires_at)
        self.stats["stored"] += 1
        return True

    def peek(self, hostname: str, now: int) -> Optional[CachedToken]:
        for origin in _PREFERENCE:
            entry = self._slots.get((hostname, origin))
            if entry is not None and now < entry.expires_at:
                return entry
        return None

    def select(self, hostname: str, now: int) -> Optional[Tuple[bytes, TokenOrigin]]:
        entry = self.peek(hostname, now)
        if entry is None:
            return None
        del self._slots[(hostname, entry.origin)]
        self.stats["selected"] += 1
        return entry.token_bytes, entry.origin

    def purge_expired(self, now: int) -> int:
        dead = [slot for slot, entry in self._slots.items() if entry.expires_at <= now]
        for slot in dead:
            del self._slots[slot]
        self.stats["purged"] += len(dead)
        return len(dead)

    def entries(self) -> List[CachedToken]:
        return sorted(self._slots.values(), key=lambda e: (e.hostname, e.origin.value))

    def dump(self) -> str:
        return "".join(
            f"{e.hostname} {e.origin} {e.expires_at} {e.token_bytes.hex()}\n" for e in self.entries()
        )

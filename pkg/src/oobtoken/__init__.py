"""Out-of-band address validation tokens for QUIC-style handshakes."""

from .cache import CachedToken, TokenCache, TokenOrigin
from .keys import KeyRecord, KeyRegistry, RevocationEvent, UnknownKeyError
from .tokens import (
    CanonicalAddress,
    MalformedToken,
    RevokedKey,
    ValidationToken,
    Verdict,
    decode_token,
    encode_token,
    issue_token,
    validate_token,
)

__version__ = "0.1.0"

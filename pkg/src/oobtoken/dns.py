"""A resolver that can attach a QUICTOKEN record to ordinary address answers.

Only an abstract query/response model is provided; there is no RFC 1035 wire
format. QUICTOKEN answers always carry TTL 0 so that nothing but the querying
client ever holds them.
"""

from __future__ import annotations

import enum
import json
import os
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, FrozenSet, List, Mapping, Optional, Tuple, Union

from .cache import TokenOrigin
from .endpoint import Client, HandshakeTranscript, Millis, Server, run_handshake, token_clock
from .keys import KeyRecord
from .tokens import DEFAULT_LIFETIME_S, CanonicalAddress, Family, NonceSource, encode_token, issue_token


class RType(enum.Enum):
    A = "A"
    AAAA = "AAAA"
    QUICTOKEN = "QUICTOKEN"

    def __str__(self) -> str:
        return self.value


DEFAULT_TYPES = frozenset({RType.A, RType.AAAA, RType.QUICTOKEN})


class ResolutionError(LookupError):
    pass


@dataclass(frozen=True)
class DnsRecord:
    rtype: RType
    value: Union[str, bytes]
    ttl_seconds: int

    def text(self) -> str:
        value = self.value.hex() if isinstance(self.value, bytes) else self.value
        return f"{self.rtype} {self.ttl_seconds} {value}"


@dataclass(frozen=True)
class DnsQuery:
    name: str
    client_source: CanonicalAddress
    types: FrozenSet[RType] = DEFAULT_TYPES


@dataclass(frozen=True)
class DnsResponse:
    name: str
    answers: Tuple[DnsRecord, ...] = ()
    nxdomain: bool = False

    def addresses(self) -> List[str]:
        return [r.value for r in self.answers if r.rtype in (RType.A, RType.AAAA)]

    def tokens(self) -> List[bytes]:
        return [r.value for r in self.answers if r.rtype is RType.QUICTOKEN]


@dataclass(frozen=True)
class ZoneEntry:
    addresses: Tuple[str, ...]
    ttl: int = 300

    def records(self, types: FrozenSet[RType]) -> List[DnsRecord]:
        out = []
        for addr in self.addresses:
            rtype = RType.A if CanonicalAddress.parse(addr).family is Family.V4 else RType.AAAA
            if rtype in types:
                out.append(DnsRecord(rtype, addr, self.ttl))
        return out


@dataclass
class ResolverConfig:
    zone: Dict[str, ZoneEntry]
    token_trust: Dict[str, KeyRecord] = field(default_factory=dict)
    token_lifetime: int = DEFAULT_LIFETIME_S
    clock_skew_ms: int = 0
    token_support: bool = True

    @classmethod
    def from_json(cls, data: Union[str, Mapping], keys: Mapping[bytes, KeyRecord] = None, **kwargs) -> "ResolverConfig":
        """Build a config from ``{hostname: {addresses, ttl, token_key_id?}}``.

        ``token_key_id`` is hex and must name a key in ``keys``.
        """
        if isinstance(data, str):
            data = json.loads(data)
        keys = keys or {}
        zone, trust = {}, {}
        for host, entry in data.items():
            if not isinstance(entry, Mapping) or "addresses" not in entry:
                raise ValueError(f"{host}: entry needs an 'addresses' list")
            for addr in entry["addresses"]:
                CanonicalAddress.parse(addr)
            zone[host] = ZoneEntry(tuple(entry["addresses"]), int(entry.get("ttl", 300)))
            kid = entry.get("token_key_id")
            if kid is not None:
                record = keys.get(bytes.fromhex(kid))
                if record is None:
                    raise ValueError(f"{host}: token_key_id {kid} not among the shared keys")
                trust[host] = record
        return cls(zone, trust, **kwargs)


def resolve(
    query: DnsQuery,
    config: ResolverConfig,
    now: Millis,
    nonce_source: NonceSource = os.urandom,
) -> DnsResponse:
    entry = config.zone.get(query.name)
    if entry is None:
        return DnsResponse(query.name, (), nxdomain=True)
    answers = entry.records(query.types)
    key = config.token_trust.get(query.name)
    if config.token_support and RType.QUICTOKEN in query.types and key is not None and not key.revoked:
        clock = token_clock(now) + config.clock_skew_ms
        token = issue_token(key, query.client_source, clock, config.token_lifetime, nonce_source)
        answers.append(DnsRecord(RType.QUICTOKEN, encode_token(token), 0))
    return DnsResponse(query.name, tuple(answers))


class Resolver:
    def __init__(self, config: ResolverConfig, nonce_source: NonceSource = os.urandom, name: str = "resolver"):
        self.config = config
        self.nonce_source = nonce_source
        self.name = name
        self.queries = 0

    def resolve(self, query: DnsQuery, now: Millis) -> DnsResponse:
        self.queries += 1
        return resolve(query, self.config, now, self.nonce_source)


def intermediate_cache_filter(response: DnsResponse) -> DnsResponse:
    """What any non-client cache may keep: everything with a non-zero TTL."""
    kept = tuple(r for r in response.answers if r.ttl_seconds > 0)
    return DnsResponse(response.name, kept, response.nxdomain)


class CachingForwarder:
    """A shared cache in front of an upstream resolver (or another forwarder).

    Fresh upstream answers pass through whole. Cache hits serve only what
    ``intermediate_cache_filter`` let in, so a hit never carries a QUICTOKEN.
    """

    def __init__(self, upstream):
        self.upstream = upstream
        self._store: Dict[Tuple[str, FrozenSet[RType]], Tuple[DnsResponse, Fraction]] = {}
        self.hits = 0
        self.misses = 0

    def resolve(self, query: DnsQuery, now: Millis) -> DnsResponse:
        key = (query.name, query.types)
        cached = self._store.get(key)
        if cached is not None and Fraction(now) < cached[1]:
            self.hits += 1
            return cached[0]
        self.misses += 1
        response = self.upstream.resolve(query, now)
        kept = intermediate_cache_filter(response)
        if kept.answers:
            ttl = min(r.ttl_seconds for r in kept.answers)
            self._store[key] = (kept, Fraction(now) + ttl * 1000)
        return response


@dataclass
class Lookup:
    response: DnsResponse
    server_address: str
    dns_ms: Fraction
    tokens_stored: int


def lookup_and_import(
    client: Client,
    hostname: str,
    resolver,
    now: Millis,
    client_source: Optional[CanonicalAddress] = None,
    dns_rtt_ms: Millis = 0,
) -> Lookup:
    """Resolve ``hostname`` and move any QUICTOKEN into the client's cache as out-of-band."""
    source = client_source if client_source is not None else client.address
    response = resolver.resolve(DnsQuery(hostname, source), Fraction(now) + Fraction(dns_rtt_ms) / 2)
    if response.nxdomain or not response.addresses():
        raise ResolutionError(hostname)
    arrived = Fraction(now) + Fraction(dns_rtt_ms)
    stored = 0
    for token in response.tokens()[:1]:
        stored += client.cache.store(hostname, token, TokenOrigin.OUT_OF_BAND, token_clock(arrived))
    return Lookup(response, response.addresses()[0], Fraction(dns_rtt_ms), stored)


def resolve_and_connect(
    client: Client,
    hostname: str,
    resolver,
    servers: Mapping[str, Server],
    now: Millis = 0,
    rtt_ms: Millis = 0,
    t_proc_ms: Millis = 0,
    dns_rtt_ms: Millis = 0,
    client_source: Optional[CanonicalAddress] = None,
) -> Tuple[HandshakeTranscript, Fraction]:
    """Resolve, import the token, then handshake with the server at the answered address.

    Returns the transcript and the DNS latency. The transcript's completion
    time starts at the Initial and so excludes the DNS lookup.
    """
    found = lookup_and_import(client, hostname, resolver, now, client_source, dns_rtt_ms)
    by_address = {str(CanonicalAddress.parse(a)): s for a, s in servers.items()}
    server = by_address[str(CanonicalAddress.parse(found.server_address))]
    start = Fraction(now) + found.dns_ms
    transcript = run_handshake(client, server, hostname, start, rtt_ms, t_proc_ms)
    return transcript, found.dns_ms

"""Deterministic discrete-event simulation of token-assisted handshakes.

Every client/server link has the same round-trip time and each message takes
half of it. Processing time is charged once per connection, at the server,
before it sends the cryptographic flight. Time is kept in integer
microseconds; events are ordered by (time, sequence number).

The analytic delay model lives here too, so simulated runs can be checked
against it exactly.
"""

from __future__ import annotations

import csv
import enum
import graphlib
import heapq
import io
import ipaddress
import itertools
import json
import logging
import random
from dataclasses import dataclass, field, replace
from decimal import Decimal
from fractions import Fraction
from importlib import resources
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import jsonschema

from .dns import DnsQuery, Resolver, ResolverConfig, ZoneEntry
from .cache import TokenOrigin
from .endpoint import (
    Client,
    HandshakeMessage,
    HandshakeTranscript,
    MessageKind,
    NotAuthorized,
    Server,
    ServerConfig,
    format_ms,
    token_clock,
)
from .keys import DEFAULT_SPOOF_THRESHOLD, KeyRecord, KeyRegistry
from .tokens import DEFAULT_LIFETIME_S, CanonicalAddress, encode_token, issue_token

log = logging.getLogger(__name__)

Number = Union[int, float, str, Fraction, Decimal]

CSV_HEADER = ("connection_id", "mechanism", "rtt_ms", "round_trips", "retried", "token_origin", "completion_ms", "dns_ms")
SWEEP_HEADER = ("rtt_ms", "mechanism", "simulated_ms", "analytic_ms", "ratio")
DEFAULT_T_PROC_MS = 40


def exact(value: Number) -> Fraction:
    """Exact rational for a number; floats are read through their shortest repr."""
    if isinstance(value, float):
        return Fraction(repr(value))
    if isinstance(value, (str, Decimal)):
        return Fraction(str(value))
    return Fraction(value)


def _non_negative(**values: Number) -> List[Fraction]:
    out = []
    for name, v in values.items():
        v = exact(v)
        if v < 0:
            raise ValueError(f"{name} must be >= 0, got {v}")
        out.append(v)
    return out


def analytic_default(rtt_ms: Number, t_proc_ms: Number = DEFAULT_T_PROC_MS) -> Fraction:
    """Delay overhead with a stateless retry: t_proc + 2 RTT."""
    rtt, t_proc = _non_negative(rtt_ms=rtt_ms, t_proc_ms=t_proc_ms)
    return t_proc + 2 * rtt


def analytic_proposal(rtt_ms: Number, t_proc_ms: Number = DEFAULT_T_PROC_MS) -> Fraction:
    """Delay overhead when the first Initial already carries a valid token: t_proc + RTT."""
    rtt, t_proc = _non_negative(rtt_ms=rtt_ms, t_proc_ms=t_proc_ms)
    return t_proc + rtt


def overhead_ratio(rtt_ms: Number, t_proc_ms: Number = DEFAULT_T_PROC_MS) -> Optional[Fraction]:
    default = analytic_default(rtt_ms, t_proc_ms)
    if default == 0:
        return None
    return analytic_proposal(rtt_ms, t_proc_ms) / default


def website_savings(depth: Number, rtt_ms: Number) -> Fraction:
    """Time saved until the last of ``depth`` sequential connections is up."""
    depth = exact(depth)
    if depth <= 0:
        raise ValueError("depth must be > 0")
    (rtt,) = _non_negative(rtt_ms=rtt_ms)
    return depth * rtt


class Mechanism(enum.Enum):
    NONE = "None"
    DNS_TOKEN = "DnsToken"
    EXTERNAL_TOKEN = "ExternalToken"
    NEW_TOKEN_REVISIT = "NewTokenRevisit"

    def __str__(self) -> str:
        return self.value


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class ServerSpec:
    hostname: str
    address: str
    strict_validation: bool = True
    spoof_threshold: int = DEFAULT_SPOOF_THRESHOLD
    issue_for: Tuple[str, ...] = ()
    forged_issue_for: Tuple[str, ...] = ()
    dns_ttl: int = 300


@dataclass(frozen=True)
class ResolverSpec:
    name: str
    address: str
    trusted_by: Tuple[str, ...] = ()
    clock_skew_ms: int = 0


@dataclass(frozen=True)
class ClientSpec:
    name: str
    address: str
    resolver: Optional[str] = None
    resolver_view_address: Optional[str] = None


@dataclass(frozen=True)
class ConnectionSpec:
    id: str
    client: str
    hostname: str
    after: Tuple[str, ...] = ()
    start_ms: Fraction = Fraction(0)


@dataclass(frozen=True)
class AttackerSpec:
    name: str
    target: str
    compromised_entity: str
    count: int
    start_ms: Fraction = Fraction(0)
    interval_ms: Fraction = Fraction(1)
    spoof_network: str = "198.18.0.0/15"


@dataclass(frozen=True)
class ScenarioConfig:
    rtt_ms: Fraction
    t_proc_ms: Fraction = Fraction(DEFAULT_T_PROC_MS)
    mechanism: Mechanism = Mechanism.NONE
    seed: int = 0
    servers: Tuple[ServerSpec, ...] = ()
    resolvers: Tuple[ResolverSpec, ...] = ()
    clients: Tuple[ClientSpec, ...] = ()
    connections: Tuple[ConnectionSpec, ...] = ()
    attackers: Tuple[AttackerSpec, ...] = ()
    dns_rtt_ms: Optional[Fraction] = None
    unrequited_timeout_ms: Optional[Fraction] = None
    token_lifetime: int = DEFAULT_LIFETIME_S

    @property
    def dependency_graph(self) -> Dict[str, Tuple[str, ...]]:
        return {c.id: c.after for c in self.connections}

    @property
    def effective_dns_rtt_ms(self) -> Fraction:
        return self.rtt_ms if self.dns_rtt_ms is None else self.dns_rtt_ms

    @property
    def effective_timeout_ms(self) -> Fraction:
        # never zero, or a timer could fire before the ClientFin scheduled at the same instant
        if self.unrequited_timeout_ms is not None:
            return self.unrequited_timeout_ms
        return max(10 * self.rtt_ms, Fraction(1))

    def validate(self) -> None:
        errors = []
        for name in ("rtt_ms", "t_proc_ms"):
            if getattr(self, name) < 0:
                errors.append(f"{name}: must be >= 0")
        for name in ("rtt_ms", "dns_rtt_ms"):
            v = getattr(self, name)
            if v is not None and (v * 500).denominator != 1:
                errors.append(f"{name}: half of it must be a whole number of microseconds")
        if self.dns_rtt_ms is not None and self.dns_rtt_ms < 0:
            errors.append("dns_rtt_ms: must be >= 0")
        hosts = {s.hostname: s for s in self.servers}
        resolvers = {r.name: r for r in self.resolvers}
        clients = {c.name: c for c in self.clients}
        for label, items in (("servers", [s.hostname for s in self.servers]),
                             ("resolvers", list(resolvers)), ("clients", list(clients)),
                             ("connections", [c.id for c in self.connections])):
            dupes = {x for x in items if items.count(x) > 1}
            if dupes:
                errors.append(f"{label}: duplicate names {sorted(dupes)}")
        addresses = [s.address for s in self.servers] + [c.address for c in self.clients]
        for addr in addresses + [r.address for r in self.resolvers]:
            try:
                CanonicalAddress.parse(addr)
            except ValueError:
                errors.append(f"address {addr!r}: not an IP address")
        normalized = [a for a in addresses if _is_ip(a)]
        normalized = [str(CanonicalAddress.parse(a)) for a in normalized]
        if len(set(normalized)) != len(normalized):
            errors.append("addresses: servers and clients need distinct addresses")
        for s in self.servers:
            for t in s.issue_for + s.forged_issue_for:
                if t not in hosts:
                    errors.append(f"servers.{s.hostname}.issue_for: unknown hostname {t!r}")
        for r in self.resolvers:
            for t in r.trusted_by:
                if t not in hosts:
                    errors.append(f"resolvers.{r.name}.trusted_by: unknown hostname {t!r}")
        for c in self.clients:
            if c.resolver is not None and c.resolver not in resolvers:
                errors.append(f"clients.{c.name}.resolver: unknown resolver {c.resolver!r}")
        ids = {c.id for c in self.connections}
        for c in self.connections:
            if c.client not in clients:
                errors.append(f"connections.{c.id}.client: unknown client {c.client!r}")
            if c.hostname not in hosts:
                errors.append(f"connections.{c.id}.hostname: unknown hostname {c.hostname!r}")
            for p in c.after:
                if p not in ids:
                    errors.append(f"connections.{c.id}.after: unknown connection {p!r}")
        for a in self.attackers:
            if a.target not in hosts:
                errors.append(f"attackers.{a.name}.target: unknown hostname {a.target!r}")
            else:
                issuers = {r.name for r in self.resolvers if a.target in r.trusted_by}
                issuers |= {s.hostname for s in self.servers if a.target in s.issue_for}
                if a.compromised_entity not in issuers:
                    errors.append(f"attackers.{a.name}.compromised_entity: {a.target} shares no key with {a.compromised_entity!r}")
            try:
                if ipaddress.ip_network(a.spoof_network).num_addresses - 2 < a.count:
                    errors.append(f"attackers.{a.name}.spoof_network: too small for {a.count} addresses")
            except ValueError:
                errors.append(f"attackers.{a.name}.spoof_network: not a network")
        if not errors:
            try:
                tuple(graphlib.TopologicalSorter(self.dependency_graph).static_order())
            except graphlib.CycleError as exc:
                errors.append(f"connections: dependency cycle through {exc.args[1]}")
        if errors:
            raise ScenarioError("; ".join(errors))

    # JSON

    @classmethod
    def from_dict(cls, data: Mapping) -> "ScenarioConfig":
        try:
            jsonschema.validate(data, scenario_schema())
        except jsonschema.ValidationError as exc:
            where = "".join(f"[{p}]" if isinstance(p, int) else f".{p}" for p in exc.absolute_path).lstrip(".")
            raise ScenarioError(f"{where or '<root>'}: {exc.message}") from None
        hosts = data.get("hosts", {})
        cfg = cls(
            rtt_ms=exact(data["rtt_ms"]),
            t_proc_ms=exact(data.get("t_proc_ms", DEFAULT_T_PROC_MS)),
            mechanism=Mechanism(data.get("mechanism", "None")),
            seed=int(data.get("seed", 0)),
            servers=tuple(
                ServerSpec(
                    s["hostname"], s["address"], s.get("strict_validation", True),
                    s.get("spoof_threshold", DEFAULT_SPOOF_THRESHOLD), tuple(s.get("issue_for", ())),
                    tuple(s.get("forged_issue_for", ())), s.get("dns_ttl", 300),
                )
                for s in hosts.get("servers", ())
            ),
            resolvers=tuple(
                ResolverSpec(r["name"], r["address"], tuple(r.get("trusted_by", ())), r.get("clock_skew_ms", 0))
                for r in hosts.get("resolvers", ())
            ),
            clients=tuple(
                ClientSpec(c["name"], c["address"], c.get("resolver"), c.get("resolver_view_address"))
                for c in hosts.get("clients", ())
            ),
            connections=tuple(
                ConnectionSpec(c["id"], c["client"], c["hostname"], tuple(c.get("after", ())), exact(c.get("start_ms", 0)))
                for c in data.get("connections", ())
            ),
            attackers=tuple(
                AttackerSpec(
                    a["name"], a["target"], a["compromised_entity"], a["count"], exact(a.get("start_ms", 0)),
                    exact(a.get("interval_ms", 1)), a.get("spoof_network", "198.18.0.0/15"),
                )
                for a in data.get("attackers", ())
            ),
            dns_rtt_ms=exact(data["dns_rtt_ms"]) if "dns_rtt_ms" in data else None,
            unrequited_timeout_ms=exact(data["unrequited_timeout_ms"]) if "unrequited_timeout_ms" in data else None,
            token_lifetime=data.get("token_lifetime", DEFAULT_LIFETIME_S),
        )
        cfg.validate()
        return cfg

    @classmethod
    def from_json(cls, text: str) -> "ScenarioConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ScenarioError(f"line {exc.lineno} column {exc.colno}: {exc.msg}") from None
        return cls.from_dict(data)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "ScenarioConfig":
        return cls.from_json(Path(path).read_text())


def _is_ip(text: str) -> bool:
    try:
        CanonicalAddress.parse(text)
        return True
    except ValueError:
        return False


def scenario_schema() -> dict:
    return json.loads(resources.files(__package__).joinpath("scenario.schema.json").read_text())


def bundled_scenarios() -> List[str]:
    folder = resources.files(__package__).joinpath("scenarios")
    return sorted(p.name for p in folder.iterdir() if p.name.endswith(".json"))


def load_bundled(name: str) -> ScenarioConfig:
    if not name.endswith(".json"):
        name += ".json"
    return ScenarioConfig.from_json(resources.files(__package__).joinpath("scenarios", name).read_text())


def _us(ms: Fraction) -> int:
    value = ms * 1000
    if value.denominator != 1:
        raise ScenarioError(f"{ms} ms is not a whole number of microseconds")
    return int(value)


def _ms(us: int) -> Fraction:
    return Fraction(us, 1000)


class EventLoop:
    """Single-threaded event queue ordered by (time, insertion sequence)."""

    def __init__(self):
        self.now = 0
        self._queue: List[Tuple[int, int, Callable, tuple]] = []
        self._seq = itertools.count()
        self.processed = 0

    def schedule(self, at: int, fn: Callable, *args) -> None:
        if at < self.now:
            raise ValueError(f"cannot schedule in the past ({at} < {self.now})")
        heapq.heappush(self._queue, (at, next(self._seq), fn, args))

    def run(self) -> None:
        while self._queue:
            at, _, fn, args = heapq.heappop(self._queue)
            assert at >= self.now
            self.now = at
            self.processed += 1
            fn(*args)


@dataclass(frozen=True)
class SimEvent:
    time_ms: Fraction
    kind: str
    server: str
    key_id: str
    owner: str
    spoof_count: int


@dataclass
class ConnectionResult:
    spec: ConnectionSpec
    transcript: Optional[HandshakeTranscript] = None
    dns_ms: Fraction = Fraction(0)
    started_at: Optional[Fraction] = None
    established_at: Optional[Fraction] = None
    fetched_at: Optional[Fraction] = None


@dataclass
class RunReport:
    mechanism: Mechanism
    rtt_ms: Fraction
    results: List[ConnectionResult]
    page_establishment_time: Optional[Fraction]
    events: List[SimEvent] = field(default_factory=list)
    messages_sent: int = 0
    messages_delivered: int = 0
    blackholed: int = 0
    baseline_page_time: Optional[Fraction] = None
    total_savings: Optional[Fraction] = None

    @property
    def transcripts(self) -> List[HandshakeTranscript]:
        return [r.transcript for r in self.results if r.transcript is not None]

    def result(self, connection_id: str) -> ConnectionResult:
        for r in self.results:
            if r.spec.id == connection_id:
                return r
        raise KeyError(connection_id)

    def csv_rows(self) -> List[Tuple[str, ...]]:
        rows = []
        for r in self.results:
            t = r.transcript
            if t is None:
                rows.append((r.spec.id, str(self.mechanism), format_ms(self.rtt_ms), "0", "false", "None", "", format_ms(r.dns_ms)))
                continue
            rows.append((
                r.spec.id,
                str(self.mechanism),
                format_ms(self.rtt_ms),
                str(t.round_trips),
                str(t.retried).lower(),
                str(t.token_origin_used),
                format_ms(t.completion_time) if t.completion_time is not None else "",
                format_ms(r.dns_ms),
            ))
        return rows

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        writer.writerows(self.csv_rows())
        return buf.getvalue()


class _Simulation:
    def __init__(self, config: ScenarioConfig):
        config.validate()
        self.cfg = config
        self.loop = EventLoop()
        self.one_way = _us(config.rtt_ms) // 2
        self.dns_rtt = _us(config.effective_dns_rtt_ms)
        self.t_proc = _us(config.t_proc_ms)
        self.timeout = _us(config.effective_timeout_ms)
        self.issued_for: Dict[bytes, CanonicalAddress] = {}
        self.events: List[SimEvent] = []
        self.sent = self.delivered = self.blackholed = 0
        mech = config.mechanism

        self.servers: Dict[str, Server] = {}
        registries: Dict[str, KeyRegistry] = {}
        thresholds = {s.hostname: s.spoof_threshold for s in config.servers}
        for s in config.servers:
            reg = KeyRegistry(self._stream(f"keys/{s.hostname}"))
            reg.register(f"{s.hostname}#local", spoof_threshold=s.spoof_threshold)
            registries[s.hostname] = reg

        # key shares, in listing order so runs stay reproducible
        self.entity_keys: Dict[Tuple[str, str], KeyRecord] = {}
        resolver_trust: Dict[str, Dict[str, KeyRecord]] = {}
        for r in config.resolvers:
            resolver_trust[r.name] = {}
            for host in r.trusted_by:
                rec = registries[host].register(r.name, spoof_threshold=thresholds[host])
                self.entity_keys[(host, r.name)] = rec
                resolver_trust[r.name][host] = rec.copy_for_issuer()
        shares: Dict[str, Dict[str, KeyRecord]] = {s.hostname: {} for s in config.servers}
        for s in config.servers:
            for target in s.issue_for:
                rec = registries[target].register(s.hostname, spoof_threshold=thresholds[target])
                self.entity_keys[(target, s.hostname)] = rec
                shares[s.hostname][target] = rec.copy_for_issuer()
            forge = self._stream(f"forged/{s.hostname}")
            for target in s.forged_issue_for:
                shares[s.hostname][target] = KeyRecord(forge(4), forge(32), s.hostname)

        for s in config.servers:
            reg = registries[s.hostname]
            local = next(iter(reg))
            scfg = ServerConfig(
                hostname=s.hostname,
                local_keys=(local,),
                strict_validation=s.strict_validation,
                trusted_key_shares=shares[s.hostname],
                external_issue_policy=frozenset(shares[s.hostname]),
                token_lifetime=config.token_lifetime,
                issue_new_token=mech is Mechanism.NEW_TOKEN_REVISIT,
            )
            self.servers[s.hostname] = Server(
                scfg, reg, s.address, self._stream(f"nonce/{s.hostname}"), ground_truth=self.issued_for.get
            )

        zone = {s.hostname: ZoneEntry((s.address,), s.dns_ttl) for s in config.servers}
        self.resolvers = {
            r.name: Resolver(
                ResolverConfig(zone, resolver_trust[r.name], config.token_lifetime, r.clock_skew_ms,
                               token_support=mech is Mechanism.DNS_TOKEN),
                self._stream(f"nonce/{r.name}"),
                name=r.name,
            )
            for r in config.resolvers
        }
        self.zone = zone
        self.client_specs = {c.name: c for c in config.clients}
        self.clients = {c.name: Client(c.address, name=c.name) for c in config.clients}
        self.by_address: Dict[str, object] = {}
        for host, srv in self.servers.items():
            self.by_address[str(srv.address)] = srv
        for cli in self.clients.values():
            self.by_address[str(cli.address)] = cli

        self.results = {c.id: ConnectionResult(c) for c in config.connections}
        self.children: Dict[str, List[ConnectionSpec]] = {c.id: [] for c in config.connections}
        for c in config.connections:
            for p in c.after:
                self.children[p].append(c)
        self.waiting = {c.id: len(set(c.after)) for c in config.connections}
        self.ready_at: Dict[str, int] = {c.id: _us(c.start_ms) for c in config.connections}

    def _stream(self, label: str) -> Callable[[int], bytes]:
        return random.Random(f"{self.cfg.seed}/{label}").randbytes

    # network

    def send(self, msg: HandshakeMessage, delay: int = 0) -> None:
        self.sent += 1
        if msg.token_bytes is not None and msg.kind is not MessageKind.INITIAL:
            self.issued_for.setdefault(msg.token_bytes, msg.destination_address)
        self.loop.schedule(self.loop.now + delay + self.one_way, self._deliver, msg)

    def _deliver(self, msg: HandshakeMessage) -> None:
        self.delivered += 1
        node = self.by_address.get(str(msg.destination_address))
        now = _ms(self.loop.now)
        if node is None:
            self.blackholed += 1
        elif isinstance(node, Server):
            self._server_receive(node, msg, now)
        else:
            self._client_receive(node, msg, now)

    def _server_receive(self, server: Server, msg: HandshakeMessage, now: Fraction) -> None:
        if msg.kind is MessageKind.INITIAL:
            reply = server.on_initial(msg, now)
            if reply.kind is MessageKind.SERVER_FLIGHT:
                self.send(reply, delay=self.t_proc)
                self.loop.schedule(self.loop.now + self.t_proc + self.timeout, self._timeout, server, msg.connection_id)
            else:
                self.send(reply)
        elif msg.kind is MessageKind.CLIENT_FIN:
            out = server.on_client_fin(msg, now)
            if self.cfg.mechanism is Mechanism.EXTERNAL_TOKEN:
                for child in self.children.get(msg.connection_id, ()):
                    parent = self.results[msg.connection_id].spec
                    if child.client != parent.client or child.hostname == server.hostname:
                        continue
                    try:
                        out.append(server.issue_external_token(msg.connection_id, child.hostname, now))
                    except NotAuthorized:
                        pass
            out.append(server.app_data(msg.connection_id))
            for m in out:
                self.send(m)

    def _timeout(self, server: Server, cid: str) -> None:
        event = server.check_unrequited(cid)
        if event is not None:
            ev = SimEvent(_ms(self.loop.now), "revocation", server.hostname, event.key_id.hex(), event.owner_entity, event.spoof_count)
            log.info("t=%s ms %s revoked key %s (owner %s) after %d unrequited requests",
                     format_ms(ev.time_ms), ev.server, ev.key_id, ev.owner, ev.spoof_count)
            self.events.append(ev)

    def _client_receive(self, client: Client, msg: HandshakeMessage, now: Fraction) -> None:
        for out in client.receive(msg, now):
            self.send(out)
        result = self.results.get(msg.connection_id)
        if result is None:
            return
        if msg.kind is MessageKind.SERVER_FLIGHT and result.transcript.established and result.established_at is None:
            result.established_at = now
        elif msg.kind is MessageKind.APP_DATA and result.fetched_at is None:
            result.fetched_at = now
            for child in self.children[msg.connection_id]:
                self.ready_at[child.id] = max(self.ready_at[child.id], self.loop.now)
                self.waiting[child.id] -= 1
                if self.waiting[child.id] == 0:
                    self.loop.schedule(self.ready_at[child.id], self._start, child)

    # connections

    def _start(self, conn: ConnectionSpec) -> None:
        result = self.results[conn.id]
        result.started_at = _ms(self.loop.now)
        cspec = self.client_specs[conn.client]
        if cspec.resolver is None:
            self._begin_handshake(conn, self.zone[conn.hostname].addresses[0])
            return
        view = CanonicalAddress.parse(cspec.resolver_view_address or cspec.address)
        query = DnsQuery(conn.hostname, view)
        half = self.dns_rtt // 2
        self.loop.schedule(self.loop.now + half, self._resolve, conn, query, self.dns_rtt - half)

    def _resolve(self, conn: ConnectionSpec, query: DnsQuery, remaining: int) -> None:
        resolver = self.resolvers[self.client_specs[conn.client].resolver]
        response = resolver.resolve(query, _ms(self.loop.now))
        for token in response.tokens():
            self.issued_for.setdefault(token, query.client_source)
        self.loop.schedule(self.loop.now + remaining, self._dns_answer, conn, response)

    def _dns_answer(self, conn: ConnectionSpec, response) -> None:
        result = self.results[conn.id]
        result.dns_ms = _ms(self.loop.now) - result.started_at
        client = self.clients[conn.client]
        for token in response.tokens()[:1]:
            client.cache.store(conn.hostname, token, TokenOrigin.OUT_OF_BAND, token_clock(_ms(self.loop.now)))
        self._begin_handshake(conn, response.addresses()[0])

    def _begin_handshake(self, conn: ConnectionSpec, address: str) -> None:
        client = self.clients[conn.client]
        msg = client.start(conn.hostname, address, _ms(self.loop.now), conn.id)
        self.results[conn.id].transcript = client.connections[conn.id].transcript
        self.send(msg)

    def _attack(self, spec: AttackerSpec) -> None:
        server = self.servers[spec.target]
        key = self.entity_keys[(spec.target, spec.compromised_entity)].copy_for_issuer()
        nonces = self._stream(f"attacker/{spec.name}")
        hosts = ipaddress.ip_network(spec.spoof_network).hosts()
        for i in range(spec.count):
            at = _us(spec.start_ms + i * spec.interval_ms)
            spoofed = CanonicalAddress.parse(str(next(hosts)))
            self.loop.schedule(at, self._spoof, server, key, spoofed, f"{spec.name}/{i:04d}", nonces)

    def _spoof(self, server: Server, key: KeyRecord, spoofed: CanonicalAddress, cid: str, nonces) -> None:
        now = _ms(self.loop.now)
        token = encode_token(issue_token(key, spoofed, token_clock(now), self.cfg.token_lifetime, nonces))
        self.issued_for[token] = spoofed
        self.send(HandshakeMessage(MessageKind.INITIAL, spoofed, server.address, cid, token_bytes=token))

    def run(self) -> RunReport:
        for a in self.cfg.attackers:
            self._attack(a)
        for c in self.cfg.connections:
            if not c.after:
                self.loop.schedule(self.ready_at[c.id], self._start, c)
        self.loop.run()
        for r in self.results.values():
            if r.transcript is None:
                continue
            state = self.servers[r.spec.hostname].connections.get(r.spec.id)
            if state is not None and state.verdicts:
                r.transcript.verdict = state.verdicts[0]
        done = [r.established_at for r in self.results.values() if r.established_at is not None]
        return RunReport(
            mechanism=self.cfg.mechanism,
            rtt_ms=self.cfg.rtt_ms,
            results=list(self.results.values()),
            page_establishment_time=max(done) if done else None,
            events=self.events,
            messages_sent=self.sent,
            messages_delivered=self.delivered,
            blackholed=self.blackholed,
        )


def run(config: ScenarioConfig, paired: bool = True) -> RunReport:
    """Simulate a scenario; with ``paired`` also run it without tokens and report the savings."""
    report = _Simulation(config).run()
    if not paired:
        return report
    if config.mechanism is Mechanism.NONE:
        baseline = report
    else:
        baseline = _Simulation(replace(config, mechanism=Mechanism.NONE)).run()
    report.baseline_page_time = baseline.page_establishment_time
    if baseline.page_establishment_time is not None and report.page_establishment_time is not None:
        report.total_savings = baseline.page_establishment_time - report.page_establishment_time
    return report


# scenario builders used by the sweep, the CLI and the tests


def single_connection(
    rtt_ms: Number,
    t_proc_ms: Number = DEFAULT_T_PROC_MS,
    mechanism: Mechanism = Mechanism.DNS_TOKEN,
    seed: int = 0,
    nat: bool = False,
) -> ScenarioConfig:
    return ScenarioConfig(
        rtt_ms=exact(rtt_ms),
        t_proc_ms=exact(t_proc_ms),
        mechanism=mechanism,
        seed=seed,
        servers=(ServerSpec("www.example", "203.0.113.10"),),
        resolvers=(ResolverSpec("resolver", "198.51.100.53", ("www.example",)),),
        clients=(ClientSpec("alice", "192.0.2.7", "resolver", "10.0.0.7" if nat else None),),
        connections=(ConnectionSpec("c1", "alice", "www.example"),),
    )


def chain(
    depth: int,
    rtt_ms: Number,
    t_proc_ms: Number = DEFAULT_T_PROC_MS,
    mechanism: Mechanism = Mechanism.DNS_TOKEN,
    seed: int = 0,
) -> ScenarioConfig:
    """``depth`` connections to distinct hostnames, each triggered by the previous one."""
    if depth < 1:
        raise ValueError("depth must be >= 1")
    hosts = [f"h{i}.example" for i in range(1, depth + 1)]
    servers = tuple(
        ServerSpec(h, f"203.0.113.{10 + i}", issue_for=(hosts[i + 1],) if i + 1 < depth else ())
        for i, h in enumerate(hosts)
    )
    conns = tuple(
        ConnectionSpec(f"c{i + 1}", "alice", h, after=(f"c{i}",) if i else ()) for i, h in enumerate(hosts)
    )
    return ScenarioConfig(
        rtt_ms=exact(rtt_ms),
        t_proc_ms=exact(t_proc_ms),
        mechanism=mechanism,
        seed=seed,
        servers=servers,
        resolvers=(ResolverSpec("resolver", "198.51.100.53", tuple(hosts)),),
        clients=(ClientSpec("alice", "192.0.2.7", "resolver"),),
        connections=conns,
    )


def chain_savings(depth: int, rtt_ms: Number, t_proc_ms: Number = DEFAULT_T_PROC_MS) -> Fraction:
    return run(chain(depth, rtt_ms, t_proc_ms, Mechanism.DNS_TOKEN)).total_savings


@dataclass(frozen=True)
class SweepRow:
    rtt_ms: Fraction
    mechanism: Mechanism
    simulated_ms: Fraction
    analytic_ms: Fraction
    ratio: Optional[Fraction]


_ANALYTIC = {Mechanism.NONE: analytic_default, Mechanism.DNS_TOKEN: analytic_proposal}


def sweep(
    rtt_list: Iterable[Number],
    t_proc_ms: Number = DEFAULT_T_PROC_MS,
    mechanisms: Sequence[Mechanism] = (Mechanism.NONE, Mechanism.DNS_TOKEN),
) -> List[SweepRow]:
    """Simulate one fresh connection per (rtt, mechanism).

    ``ratio`` is the simulated delay as a fraction of the analytic default at
    the same RTT; it is None where that default is zero.
    """
    rows = []
    for rtt in rtt_list:
        for mech in mechanisms:
            if mech not in _ANALYTIC:
                raise ValueError(f"sweep supports {[str(m) for m in _ANALYTIC]}, not {mech}")
            report = run(single_connection(rtt, t_proc_ms, mech), paired=False)
            simulated = report.transcripts[0].completion_time
            default = analytic_default(rtt, t_proc_ms)
            rows.append(SweepRow(exact(rtt), mech, simulated, _ANALYTIC[mech](rtt, t_proc_ms),
                                 simulated / default if default else None))
    return rows


def format_ratio(ratio: Optional[Fraction]) -> str:
    if ratio is None:
        return ""
    return f"{float(ratio):.6f}".rstrip("0").rstrip(".")


def sweep_csv(rows: Sequence[SweepRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SWEEP_HEADER)
    for r in rows:
        writer.writerow((format_ms(r.rtt_ms), str(r.mechanism), format_ms(r.simulated_ms),
                         format_ms(r.analytic_ms), format_ratio(r.ratio)))
    return buf.getvalue()

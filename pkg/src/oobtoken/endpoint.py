"""Client and server handshake state machines over abstract messages.

Handlers are pure event handlers: a message goes in, zero or more messages
come out. They hold no timers; all timing is the caller's business. The
cryptographic handshake is collapsed into a single ``ServerFlight`` message
standing in for ServerHello/EE/CERT/CV/FIN.
"""

from __future__ import annotations

import enum
import heapq
import itertools
import math
import os
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Dict, FrozenSet, List, Mapping, Optional, Tuple, Union

from .cache import TokenCache, TokenOrigin
from .keys import KeyRecord, KeyRegistry, RevocationEvent
from .tokens import (
    DEFAULT_LIFETIME_S,
    CanonicalAddress,
    NonceSource,
    Verdict,
    encode_token,
    issue_token,
    validate_token,
)

Millis = Union[int, Fraction]


class ProtocolError(Exception):
    pass


class HandshakeIncomplete(Exception):
    pass


class NotAuthorized(Exception):
    pass


class MessageKind(enum.Enum):
    INITIAL = "Initial"
    RETRY = "Retry"
    SERVER_FLIGHT = "ServerFlight"
    CLIENT_FIN = "ClientFin"
    NEW_TOKEN = "NewToken"
    EXTERNAL_TOKEN = "ExternalToken"
    APP_DATA = "AppData"

    def __str__(self) -> str:
        return self.value


class TokenUse(enum.Enum):
    NONE = "None"
    RETRY = "Retry"
    SERVER_ISSUED = "ServerIssued"
    OUT_OF_BAND = "OutOfBand"

    def __str__(self) -> str:
        return self.value


_USE_BY_ORIGIN = {TokenOrigin.SERVER_ISSUED: TokenUse.SERVER_ISSUED, TokenOrigin.OUT_OF_BAND: TokenUse.OUT_OF_BAND}
_CLIENT_SENT = {MessageKind.INITIAL, MessageKind.CLIENT_FIN}


@dataclass(frozen=True)
class HandshakeMessage:
    kind: MessageKind
    source_address: CanonicalAddress
    destination_address: CanonicalAddress
    connection_id: str
    token_bytes: Optional[bytes] = None
    target_hostname: Optional[str] = None

    def __post_init__(self):
        if self.kind in (MessageKind.RETRY, MessageKind.NEW_TOKEN) and self.token_bytes is None:
            raise ValueError(f"{self.kind} must carry a token")
        if self.kind is MessageKind.EXTERNAL_TOKEN and (self.token_bytes is None or not self.target_hostname):
            raise ValueError("ExternalToken must carry a token and a target hostname")


def token_clock(now: Millis) -> int:
    """Tokens carry whole milliseconds."""
    return math.floor(now)


def format_ms(value: Millis) -> str:
    value = Fraction(value)
    if value.denominator == 1:
        return str(value.numerator)
    # microsecond resolution is exact for every time the simulator produces
    text = f"{float(value):.3f}".rstrip("0").rstrip(".")
    return text


@dataclass(frozen=True)
class TranscriptEntry:
    time: Fraction
    direction: str
    kind: MessageKind
    token_bytes: Optional[bytes]

    def line(self) -> str:
        token = self.token_bytes.hex() if self.token_bytes is not None else "-"
        return f"t={format_ms(self.time)} dir={self.direction} kind={self.kind} token={token}"


@dataclass
class HandshakeTranscript:
    connection_id: str
    client_hostname_target: str
    start_time: Fraction = Fraction(0)
    messages: List[TranscriptEntry] = field(default_factory=list)
    round_trips: int = 0
    retried: bool = False
    token_origin_used: TokenUse = TokenUse.NONE
    completion_time: Optional[Fraction] = None
    aborted: Optional[str] = None
    verdict: Optional[Verdict] = None

    @property
    def established(self) -> bool:
        return self.completion_time is not None

    def record(self, now: Millis, direction: str, msg: HandshakeMessage) -> None:
        self.messages.append(TranscriptEntry(Fraction(now), direction, msg.kind, msg.token_bytes))

    def kinds(self) -> Tuple[str, ...]:
        return tuple(f"{e.direction}:{e.kind}" for e in self.messages)

    def shape(self) -> Tuple[Tuple[str, ...], int, bool]:
        """Message kinds and round-trip accounting, without times or token bytes."""
        return self.kinds(), self.round_trips, self.retried

    def to_text(self) -> str:
        return "".join(e.line() + "\n" for e in self.messages)


class _ClientState(enum.Enum):
    AWAITING = "awaiting"
    ESTABLISHED = "established"
    ABORTED = "aborted"


@dataclass
class _ClientConnection:
    hostname: str
    server_address: CanonicalAddress
    transcript: HandshakeTranscript
    state: _ClientState = _ClientState.AWAITING
    retries: int = 0
    fetched: bool = False


class Client:
    """A client with its own token cache.

    The client never checks who issued an out-of-band token; it only applies
    the cache's preference order.
    """

    def __init__(self, address: Union[str, CanonicalAddress], cache: Optional[TokenCache] = None, name: str = "client"):
        self.address = CanonicalAddress.parse(address)
        self.cache = cache if cache is not None else TokenCache()
        self.name = name
        self.connections: Dict[str, _ClientConnection] = {}
        self._ids = itertools.count(1)

    @property
    def transcripts(self) -> Dict[str, HandshakeTranscript]:
        return {cid: c.transcript for cid, c in self.connections.items()}

    def _send(self, conn: _ClientConnection, msg: HandshakeMessage, now: Millis) -> HandshakeMessage:
        conn.transcript.record(now, "c2s", msg)
        return msg

    def start(
        self,
        hostname: str,
        server_address: Union[str, CanonicalAddress],
        now: Millis,
        connection_id: Optional[str] = None,
    ) -> HandshakeMessage:
        """Open a connection and build its first Initial, attaching the preferred cached token."""
        cid = connection_id or f"{self.name}-{next(self._ids)}"
        if cid in self.connections:
            raise ValueError(f"connection id {cid!r} already in use")
        server_address = CanonicalAddress.parse(server_address)
        transcript = HandshakeTranscript(cid, hostname, start_time=Fraction(now))
        conn = _ClientConnection(hostname, server_address, transcript)
        self.connections[cid] = conn
        picked = self.cache.select(hostname, token_clock(now))
        token = None
        if picked is not None:
            token, origin = picked
            transcript.token_origin_used = _USE_BY_ORIGIN[origin]
        msg = HandshakeMessage(MessageKind.INITIAL, self.address, server_address, cid, token_bytes=token)
        return self._send(conn, msg, now)

    def on_retry(self, retry: HandshakeMessage, now: Millis) -> HandshakeMessage:
        """Echo the retry token in a fresh Initial. A second Retry aborts the connection."""
        conn = self.connections[retry.connection_id]
        if conn.state is not _ClientState.AWAITING:
            raise ProtocolError(f"Retry in state {conn.state.value}")
        conn.transcript.record(now, "s2c", retry)
        conn.transcript.round_trips += 1
        if conn.retries >= 1:
            conn.state = _ClientState.ABORTED
            conn.transcript.aborted = "second Retry on one connection"
            raise ProtocolError(conn.transcript.aborted)
        conn.retries += 1
        conn.transcript.retried = True
        if conn.transcript.token_origin_used is TokenUse.NONE:
            conn.transcript.token_origin_used = TokenUse.RETRY
        msg = HandshakeMessage(
            MessageKind.INITIAL, self.address, conn.server_address, retry.connection_id, token_bytes=retry.token_bytes
        )
        return self._send(conn, msg, now)

    def receive(self, msg: HandshakeMessage, now: Millis) -> List[HandshakeMessage]:
        conn = self.connections.get(msg.connection_id)
        if conn is None or conn.state is _ClientState.ABORTED:
            return []
        if msg.kind is MessageKind.RETRY:
            try:
                return [self.on_retry(msg, now)]
            except ProtocolError:
                return []
        conn.transcript.record(now, "s2c", msg)
        if msg.kind is MessageKind.SERVER_FLIGHT:
            if conn.state is not _ClientState.AWAITING:
                return []
            conn.state = _ClientState.ESTABLISHED
            conn.transcript.round_trips += 1
            conn.transcript.completion_time = Fraction(now) - conn.transcript.start_time
            fin = HandshakeMessage(MessageKind.CLIENT_FIN, self.address, conn.server_address, msg.connection_id)
            return [self._send(conn, fin, now)]
        if msg.kind is MessageKind.NEW_TOKEN:
            self.cache.store(conn.hostname, msg.token_bytes, TokenOrigin.SERVER_ISSUED, token_clock(now))
        elif msg.kind is MessageKind.EXTERNAL_TOKEN:
            self.cache.store(msg.target_hostname, msg.token_bytes, TokenOrigin.OUT_OF_BAND, token_clock(now))
        elif msg.kind is MessageKind.APP_DATA:
            conn.fetched = True
        return []


@dataclass
class ServerConfig:
    hostname: str
    local_keys: Tuple[KeyRecord, ...]
    strict_validation: bool = True
    trusted_key_shares: Mapping[str, KeyRecord] = field(default_factory=dict)
    external_issue_policy: FrozenSet[str] = frozenset()
    token_lifetime: int = DEFAULT_LIFETIME_S
    issue_new_token: bool = True

    def __post_init__(self):
        if not self.local_keys:
            raise ValueError("a server needs at least one local key for retry tokens")
        self.local_keys = tuple(self.local_keys)
        self.external_issue_policy = frozenset(self.external_issue_policy)


@dataclass
class ServerConnection:
    connection_id: str
    client_address: CanonicalAddress
    verdicts: List[Optional[Verdict]] = field(default_factory=list)
    validated_key_id: Optional[bytes] = None
    completed: bool = False
    new_token_sent: bool = False


class Server:
    def __init__(
        self,
        config: ServerConfig,
        registry: KeyRegistry,
        address: Union[str, CanonicalAddress],
        nonce_source: NonceSource = os.urandom,
        ground_truth: Optional[Callable[[bytes], Optional[CanonicalAddress]]] = None,
    ):
        for key in config.local_keys:
            if registry.lookup(key.key_id) is not key:
                raise ValueError(f"local key {key.key_id.hex()} is not in the server registry")
        self.config = config
        self.registry = registry
        self.address = CanonicalAddress.parse(address)
        self.nonce_source = nonce_source
        # simulator hook: maps token bytes to the address it was really issued for
        self.ground_truth = ground_truth
        self.connections: Dict[str, ServerConnection] = {}
        self._local_ids = {k.key_id for k in config.local_keys}

    @property
    def hostname(self) -> str:
        return self.config.hostname

    def _issue(self, key: KeyRecord, client: CanonicalAddress, now: Millis, lifetime: Optional[int] = None) -> bytes:
        lifetime = self.config.token_lifetime if lifetime is None else lifetime
        return encode_token(issue_token(key, client, token_clock(now), lifetime, self.nonce_source))

    def _connection(self, cid: str, completed: bool = True) -> ServerConnection:
        state = self.connections.get(cid)
        if state is None:
            raise KeyError(cid)
        if completed and not state.completed:
            raise HandshakeIncomplete(cid)
        return state

    def on_initial(self, msg: HandshakeMessage, now: Millis) -> HandshakeMessage:
        """Answer an Initial with ServerFlight if its token validates, else with a Retry.

        Every non-Valid verdict is handled exactly like a missing token.
        """
        state = self.connections.get(msg.connection_id)
        if state is None or state.client_address != msg.source_address:
            state = ServerConnection(msg.connection_id, msg.source_address)
            self.connections[msg.connection_id] = state
        verdict = None
        if msg.token_bytes is not None:
            truth = self.ground_truth(msg.token_bytes) if self.ground_truth else None
            verdict = validate_token(
                self.registry.lookup, msg.token_bytes, msg.source_address, token_clock(now), true_address=truth
            )
        state.verdicts.append(verdict)
        if verdict is Verdict.VALID or not self.config.strict_validation:
            if verdict is Verdict.VALID:
                state.validated_key_id = msg.token_bytes[1:5]
            return HandshakeMessage(MessageKind.SERVER_FLIGHT, self.address, msg.source_address, msg.connection_id)
        token = self._issue(self.config.local_keys[0], msg.source_address, now)
        return HandshakeMessage(MessageKind.RETRY, self.address, msg.source_address, msg.connection_id, token_bytes=token)

    def on_client_fin(self, msg: HandshakeMessage, now: Millis) -> List[HandshakeMessage]:
        state = self._connection(msg.connection_id, completed=False)
        state.completed = True
        if self.config.issue_new_token and not state.new_token_sent:
            return [self.issue_new_token(msg.connection_id, now)]
        return []

    def receive(self, msg: HandshakeMessage, now: Millis) -> List[HandshakeMessage]:
        if msg.kind is MessageKind.INITIAL:
            return [self.on_initial(msg, now)]
        if msg.kind is MessageKind.CLIENT_FIN:
            return self.on_client_fin(msg, now)
        return []

    def issue_new_token(self, cid: str, now: Millis, lifetime: Optional[int] = None) -> HandshakeMessage:
        state = self._connection(cid)
        token = self._issue(self.config.local_keys[0], state.client_address, now, lifetime)
        state.new_token_sent = True
        return HandshakeMessage(MessageKind.NEW_TOKEN, self.address, state.client_address, cid, token_bytes=token)

    def issue_external_token(self, cid: str, target_hostname: str, now: Millis) -> HandshakeMessage:
        """Hand the client an out-of-band token for another hostname over this connection."""
        state = self._connection(cid)
        key = self.config.trusted_key_shares.get(target_hostname)
        if target_hostname not in self.config.external_issue_policy or key is None:
            raise NotAuthorized(f"{self.hostname} may not issue tokens for {target_hostname}")
        token = self._issue(key, state.client_address, now)
        return HandshakeMessage(
            MessageKind.EXTERNAL_TOKEN,
            self.address,
            state.client_address,
            cid,
            token_bytes=token,
            target_hostname=target_hostname,
        )

    def app_data(self, cid: str) -> HandshakeMessage:
        state = self._connection(cid)
        return HandshakeMessage(MessageKind.APP_DATA, self.address, state.client_address, cid)

    def monitored_key(self, cid: str) -> Optional[bytes]:
        """Shared (non-local) key that validated this connection, if any."""
        state = self.connections.get(cid)
        if state is None or state.validated_key_id in self._local_ids:
            return None
        return state.validated_key_id

    def check_unrequited(self, cid: str) -> Optional[RevocationEvent]:
        """Called once the completion timeout for ``cid`` runs out."""
        state = self.connections.get(cid)
        key_id = self.monitored_key(cid)
        if state is None or state.completed or key_id is None:
            return None
        return self.registry.record_unrequited(key_id)


def run_handshake(
    client: Client,
    server: Server,
    hostname: str,
    now: Millis = 0,
    rtt_ms: Millis = 0,
    t_proc_ms: Millis = 0,
    connection_id: Optional[str] = None,
    external_targets: Tuple[str, ...] = (),
) -> HandshakeTranscript:
    """Drive one client/server exchange to quiescence over a fixed-latency link.

    ``t_proc_ms`` is charged once, before the server sends its flight.
    """
    one_way = Fraction(rtt_ms) / 2
    t_proc = Fraction(t_proc_ms)
    seq = itertools.count()
    queue: List[Tuple[Fraction, int, str, HandshakeMessage]] = []

    def send(at: Fraction, to: str, msg: HandshakeMessage) -> None:
        heapq.heappush(queue, (at + one_way, next(seq), to, msg))

    first = client.start(hostname, server.address, Fraction(now), connection_id)
    send(Fraction(now), "server", first)
    while queue:
        at, _, to, msg = heapq.heappop(queue)
        if to == "client":
            for out in client.receive(msg, at):
                send(at, "server", out)
            continue
        if msg.kind is MessageKind.INITIAL:
            reply = server.on_initial(msg, at)
            delay = t_proc if reply.kind is MessageKind.SERVER_FLIGHT else 0
            send(at + delay, "client", reply)
        elif msg.kind is MessageKind.CLIENT_FIN:
            out = server.on_client_fin(msg, at)
            for target in external_targets:
                try:
                    out.append(server.issue_external_token(msg.connection_id, target, at))
                except NotAuthorized:
                    pass
            out.append(server.app_data(msg.connection_id))
            for m in out:
                send(at, "client", m)
    transcript = client.connections[first.connection_id].transcript
    state = server.connections.get(first.connection_id)
    if state is not None and state.verdicts:
        transcript.verdict = state.verdicts[0]
    return transcript

"""An in-process simulated Internet for DNS.

* :class:`AuthoritativeTree` holds every zone; zone apexes are the names
  owning an SOA record and delegations are NS records below an apex.
* :class:`RecursiveResolver` walks the tree from the root on each query,
  applies its tampering policies and chases CNAMEs.
* :class:`VirtualNetwork` carries wire-encoded queries between stub clients
  and resolvers through a lossy :class:`Transport` on a virtual clock, so
  timeouts cost no wall-clock time. :class:`UdpNetwork` and
  :class:`UdpFleetServer` do the same over real sockets.
"""

from __future__ import annotations

import random
import selectors
import socket
import threading
import time
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Protocol, Sequence, Union

from . import wire
from .model import (
    DnsError,
    DnsMessage,
    DomainName,
    Question,
    Rcode,
    RecordType,
    ResourceRecord,
    make_query,
)
from .tamper import SILENCE, TamperPolicy, apply_tamper, bind_zones
from .zonefile import load_zone_file

MAX_CNAME_CHAIN = 8
MAX_REFERRALS = 32

Handler = Callable[[bytes], Optional[bytes]]


class TreeError(DnsError):
    pass


class QueryTimeout(Exception):
    def __init__(self, address: str, after: float):
        super().__init__(f"no reply from {address} after {after:g}s")
        self.address = address
        self.after = after


@dataclass
class Zone:
    apex: DomainName
    names: set[DomainName] = field(default_factory=set)


@dataclass(frozen=True)
class _Result:
    rcode: Rcode
    records: tuple[ResourceRecord, ...] = ()
    referral: Optional[DomainName] = None


class AuthoritativeTree:
    """Read-only store of authoritative zone data."""

    def __init__(self, records: Iterable[ResourceRecord]):
        self.by_name: dict[DomainName, list[ResourceRecord]] = defaultdict(list)
        for rr in records:
            if rr not in self.by_name[rr.name]:
                self.by_name[rr.name].append(rr)
        self.by_name = dict(self.by_name)
        self.zones: dict[DomainName, Zone] = {
            name: Zone(name) for name, rrs in self.by_name.items()
            if any(r.rtype is RecordType.SOA for r in rrs)
        }
        if DomainName() not in self.zones:
            raise TreeError("zone data has no root zone (SOA at '.')")
        # every ancestor of an owner name exists, possibly as an empty non-terminal
        self._existing: set[DomainName] = set()
        for name in self.by_name:
            self._existing.update(name.ancestors())
        for name in self.by_name:
            self.zones[self.zone_apex_for(name)].names.add(name)
        for apex in self.zones:
            if not apex.is_root and not self.records_at(apex, RecordType.NS):
                raise TreeError(f"zone {apex} has no NS records, so it is unreachable")

    @classmethod
    def from_file(cls, path) -> "AuthoritativeTree":
        return cls(load_zone_file(path))

    def records(self) -> list[ResourceRecord]:
        return [rr for rrs in self.by_name.values() for rr in rrs]

    def names(self) -> list[DomainName]:
        return sorted(self.by_name, key=DomainName.sort_key)

    def zone_apex_for(self, name: DomainName) -> DomainName:
        for anc in name.ancestors():
            if anc in self.zones:
                return anc
        return DomainName()  # pragma: no cover - root always exists

    def records_at(self, name: DomainName, rtype: RecordType) -> list[ResourceRecord]:
        rrs = self.by_name.get(name, [])
        if rtype is RecordType.ANY:
            return list(rrs)
        return [r for r in rrs if r.rtype is rtype]

    def query_zone(self, apex: DomainName, qname: DomainName, qtype: RecordType) -> _Result:
        """What the servers of zone ``apex`` say about ``qname``."""
        depth = len(apex.labels)
        for i in range(len(qname.labels) - depth - 1, -1, -1):
            cut = DomainName(qname.labels[i:])
            if self.records_at(cut, RecordType.NS):
                return _Result(Rcode.NOERROR, referral=cut)
        rrs = self.by_name.get(qname)
        if rrs:
            cname = [r for r in rrs if r.rtype is RecordType.CNAME]
            if cname and qtype not in (RecordType.CNAME, RecordType.ANY):
                return _Result(Rcode.NOERROR, tuple(cname))
            return _Result(Rcode.NOERROR, tuple(self.records_at(qname, qtype)))
        if qname in self._existing:
            return _Result(Rcode.NOERROR)
        return _Result(Rcode.NXDOMAIN)

    def lookup(self, qname: DomainName, qtype: RecordType) -> _Result:
        """Direct lookup in the deepest enclosing zone (no descent)."""
        res = self.query_zone(self.zone_apex_for(qname), qname, qtype)
        if res.referral is not None:
            # the deepest zone can only refer to a cut that has no zone: lame
            return _Result(Rcode.SERVFAIL)
        return res

    def answer(self, question: Union[Question, tuple], id: int = 0, rd: bool = True) -> DnsMessage:
        """The response an untampered resolver gives, computed without descent."""
        query = _as_query(question, id, rd)
        qtype = query.question.rtype
        answers: list[ResourceRecord] = []
        name = query.question.name
        for _ in range(MAX_CNAME_CHAIN + 1):
            res = self.lookup(name, qtype)
            answers.extend(res.records)
            target = _cname_target(res.records, name, qtype)
            if res.rcode is not Rcode.NOERROR or target is None:
                return query.reply(res.rcode, answers)
            name = target
        return query.reply(Rcode.SERVFAIL)

    def replace_records(self, records: Iterable[ResourceRecord]) -> "AuthoritativeTree":
        return AuthoritativeTree(records)


def _as_query(question, id: int, rd: bool) -> DnsMessage:
    if isinstance(question, DnsMessage):
        return question
    if isinstance(question, Question):
        return make_query(question.name, question.rtype, id=id, rd=rd)
    name, rtype = question
    return make_query(name, rtype, id=id, rd=rd)


def _cname_target(records: Sequence[ResourceRecord], name: DomainName,
                  qtype: RecordType) -> Optional[DomainName]:
    if qtype in (RecordType.CNAME, RecordType.ANY):
        return None
    if any(r.rtype is qtype and r.name == name for r in records):
        return None
    for r in records:
        if r.rtype is RecordType.CNAME and r.name == name:
            return r.data.target
    return None


class Clock(Protocol):
    def now(self) -> float: ...


class VirtualClock:
    def __init__(self, start: float = 0.0):
        self._now = start
        self._lock = threading.Lock()

    def now(self) -> float:
        return self._now

    def advance(self, seconds: float) -> None:
        with self._lock:
            self._now += seconds


class WallClock:
    def now(self) -> float:
        return time.monotonic()


class RecursiveResolver:
    """A recursive resolver that descends the tree and applies its policies.

    With no policies every answer equals :meth:`AuthoritativeTree.answer`.
    The cache is off by default; when on it honours the minimum answer TTL.
    """

    def __init__(self, id: str, tree: AuthoritativeTree, policies: Sequence[TamperPolicy] = (),
                 provider: str = "", address: str = "", cache: bool = False,
                 clock: Optional[Clock] = None):
        self.id = id
        self.provider = provider
        self.address = address or id
        self.tree = tree
        self.policies = tuple(bind_zones(policies, tree))
        self.cache_enabled = cache
        self.clock = clock or VirtualClock()
        self._cache: dict[tuple[DomainName, RecordType], tuple[float, DnsMessage]] = {}
        self._lock = threading.Lock()

    def with_tree(self, tree: AuthoritativeTree) -> "RecursiveResolver":
        """Same resolver, pointed at different live data (policies kept as built)."""
        clone = RecursiveResolver(self.id, tree, (), self.provider, self.address,
                                  self.cache_enabled, self.clock)
        clone.policies = self.policies
        return clone

    def _descend(self, query: DnsMessage, name: DomainName, qtype: RecordType) -> DnsMessage:
        apex = DomainName()
        visited = {apex}
        for _ in range(MAX_REFERRALS):
            res = self.tree.query_zone(apex, name, qtype)
            if res.referral is None:
                return query.reply(res.rcode, res.records)
            if res.referral not in self.tree.zones or res.referral in visited:
                break  # lame delegation or loop
            apex = res.referral
            visited.add(apex)
        return query.reply(Rcode.SERVFAIL)

    def resolve(self, question, id: int = 0, rd: bool = True):
        """Answer a query; returns a DnsMessage or :data:`SILENCE`."""
        query = _as_query(question, id, rd)
        key = (query.question.name, query.question.rtype)
        if self.cache_enabled:
            with self._lock:
                hit = self._cache.get(key)
            if hit and hit[0] > self.clock.now():
                cached = hit[1]
                return query.reply(cached.rcode, cached.answers, aa=cached.header.aa)
        out = self._resolve(query)
        if self.cache_enabled and out is not SILENCE and out.answers:
            ttl = min(r.ttl for r in out.answers)
            with self._lock:
                self._cache[key] = (self.clock.now() + ttl, out)
        return out

    def _resolve(self, query: DnsMessage):
        qtype = query.question.rtype
        name = query.question.name
        answers: list[ResourceRecord] = []
        aa = None
        for _ in range(MAX_CNAME_CHAIN + 1):
            step_query = make_query(name, qtype, id=query.header.id, rd=query.header.rd)
            auth = self._descend(step_query, name, qtype)
            out = apply_tamper(self.policies, (name, qtype), auth)
            if out is SILENCE:
                return SILENCE
            if aa is None:
                aa = out.header.aa
            answers.extend(out.answers)
            target = _cname_target(out.answers, name, qtype)
            if out.rcode is not Rcode.NOERROR or target is None:
                return query.reply(out.rcode, answers, aa=aa)
            name = target
        return query.reply(Rcode.SERVFAIL)

    def handle_wire(self, payload: bytes) -> Optional[bytes]:
        """Serve one wire query; ``None`` means stay silent."""
        try:
            query = wire.decode(payload)
        except wire.DecodeError:
            return None
        if query.header.qr:
            return None
        out = self.resolve(query)
        if out is SILENCE:
            return None
        return wire.encode(out)

    def __repr__(self) -> str:
        return f"RecursiveResolver({self.id!r}, provider={self.provider!r}, {len(self.policies)} policies)"


@dataclass(frozen=True)
class Transport:
    latency: float = 0.02
    loss_probability: float = 0.0
    timeout: float = 2.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.loss_probability <= 1.0:
            raise ValueError("loss_probability must be within [0, 1]")

    def carry(self, handler: Handler, payload: bytes,
              rng: random.Random) -> tuple[Optional[bytes], float]:
        """Deliver ``payload`` and the reply; returns (reply or None, elapsed)."""
        if rng.random() < self.loss_probability:
            return None, self.timeout
        reply = handler(payload)
        if reply is None or rng.random() < self.loss_probability:
            return None, self.timeout
        rtt = 2 * self.latency
        if rtt >= self.timeout:
            return None, self.timeout
        return reply, rtt


@dataclass(frozen=True)
class Exchange:
    """One query/reply round trip as seen by the client."""

    query: DnsMessage
    raw: Optional[bytes]
    rtt: float

    @property
    def timed_out(self) -> bool:
        return self.raw is None


class Network(Protocol):
    def send(self, address: str, payload: bytes,
             rng: random.Random) -> tuple[Optional[bytes], float]: ...


class VirtualNetwork:
    def __init__(self, resolvers: Iterable[RecursiveResolver], transport: Transport = Transport(),
                 clock: Optional[VirtualClock] = None):
        self.resolvers = {r.address: r for r in resolvers}
        self.transport = transport
        self.clock = clock or VirtualClock()

    def send(self, address: str, payload: bytes,
             rng: random.Random) -> tuple[Optional[bytes], float]:
        resolver = self.resolvers.get(address)
        if resolver is None:
            return None, self.transport.timeout
        return self.transport.carry(resolver.handle_wire, payload, rng)


class UdpNetwork:
    """Real UDP; addresses are ``host:port``."""

    def __init__(self, timeout: float = 2.0):
        self.timeout = timeout

    def send(self, address: str, payload: bytes,
             rng: random.Random) -> tuple[Optional[bytes], float]:
        host, port = split_endpoint(address)
        start = time.monotonic()
        with socket.socket(socket.AF_INET, socket.SOCK_DGRAM) as sock:
            sock.settimeout(self.timeout)
            try:
                sock.sendto(payload, (host, port))
                reply, _ = sock.recvfrom(65535)
            except (socket.timeout, OSError):
                return None, self.timeout
        return reply, time.monotonic() - start


def split_endpoint(address: str, default_port: int = 53) -> tuple[str, int]:
    host, sep, port = address.rpartition(":")
    if not sep:
        return address, default_port
    return host, int(port)


class StubClient:
    """A stub resolver: one query, one reply, no retries."""

    def __init__(self, network: Network, seed: Union[int, str] = 0):
        self.network = network
        self.seed = seed

    def exchange(self, address: str, question, rng: Optional[random.Random] = None) -> Exchange:
        rng = rng or random.Random(f"{self.seed}:{address}:{question}")
        if isinstance(question, tuple):
            question = Question(*question)
        query = make_query(question.name, question.rtype, id=rng.randrange(0x10000))
        raw, rtt = self.network.send(address, wire.encode(query), rng)
        clock = getattr(self.network, "clock", None)
        if isinstance(clock, VirtualClock):
            clock.advance(rtt)
        return Exchange(query, raw, rtt)


def stub_query(client: StubClient, resolver_address: str, q) -> DnsMessage:
    """Send ``q`` to a resolver; raises QueryTimeout or wire.DecodeError."""
    ex = client.exchange(resolver_address, q)
    if ex.raw is None:
        raise QueryTimeout(resolver_address, ex.rtt)
    return wire.decode(ex.raw)


class UdpFleetServer:
    """Serve resolvers on consecutive UDP ports, one socket each.

    Use as a context manager; the serving loop runs in a daemon thread.
    """

    def __init__(self, resolvers: Sequence[RecursiveResolver], host: str = "127.0.0.1",
                 bind_base: int = 15300):
        self.host = host
        self.bind_base = bind_base
        self.resolvers = list(resolvers)
        self.endpoints: list[tuple[str, RecursiveResolver]] = []
        self._sockets: list[socket.socket] = []
        self._selector = selectors.DefaultSelector()
        self._stop = threading.Event()
        self._thread: Optional[threading.Thread] = None

    def start(self) -> "UdpFleetServer":
        try:
            for i, resolver in enumerate(self.resolvers):
                sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
                self._sockets.append(sock)
                sock.bind((self.host, self.bind_base + i))
                sock.setblocking(False)
                self._selector.register(sock, selectors.EVENT_READ, resolver)
                self.endpoints.append((f"{self.host}:{self.bind_base + i}", resolver))
        except OSError:
            self.close()
            raise
        self._thread = threading.Thread(target=self._serve, daemon=True)
        self._thread.start()
        return self

    def _serve(self) -> None:
        while not self._stop.is_set():
            for key, _ in self._selector.select(timeout=0.1):
                sock, resolver = key.fileobj, key.data
                try:
                    payload, peer = sock.recvfrom(65535)
                except OSError:
                    continue
                reply = resolver.handle_wire(payload)
                if reply is not None:
                    sock.sendto(reply, peer)

    def close(self) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join()
        for sock in self._sockets:
            try:
                self._selector.unregister(sock)
            except (KeyError, ValueError):
                pass
            sock.close()
        self._selector.close()

    def __enter__(self) -> "UdpFleetServer":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.close()

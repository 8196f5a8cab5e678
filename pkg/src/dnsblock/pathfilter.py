"""Non-DNS blocking: packet filters, filtering proxies, shared hosting.

Also holds the circumvention matrix: for every (blocking technique,
circumvention technique) pair, whether the circumvention works and how
much effort it costs the user.

Rule file format, one rule per line, ``#`` comments::

    l3 deny <in|out> <addr>
    l4 deny <in|out> <addr> <port>
    proxy deny <url-pattern>
    proxy redirect <url-pattern> <target-url>

Hosting maps are ``address<TAB>site<TAB>name`` lines.
"""

from __future__ import annotations

import ipaddress
from collections import defaultdict
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Optional, Union
from urllib.parse import urlsplit

from .model import DnsError

WEB_PORTS = (80, 443, 8000, 8080)
EPHEMERAL_PORT = 49152


class RuleError(DnsError):
    def __init__(self, message: str, line: Optional[int] = None, source: str = "<rules>"):
        if line is not None:
            message = f"{source}:{line}: {message}"
        super().__init__(message)
        self.line = line


class Layer(Enum):
    L3 = "l3"
    L4 = "l4"


class Direction(Enum):
    INBOUND = "in"
    OUTBOUND = "out"


@dataclass(frozen=True)
class FilterRule:
    """Deny packets to (outbound) or from (inbound) ``address``.

    Direction is seen from the filtering network: outbound packets leave it
    towards the address, inbound packets arrive from it.
    """

    layer: Layer
    direction: Direction
    address: ipaddress.IPv4Address
    port: Optional[int] = None

    def __post_init__(self) -> None:
        if self.layer is Layer.L3 and self.port is not None:
            raise RuleError("l3 rules carry no port")
        if self.layer is Layer.L4:
            if self.port is None:
                raise RuleError("l4 rules need a port")
            if not 0 <= self.port <= 0xFFFF:
                raise RuleError(f"port {self.port} out of range")

    def matches(self, remote: ipaddress.IPv4Address, remote_port: int,
                direction: Direction) -> bool:
        if direction is not self.direction or remote != self.address:
            return False
        return self.layer is Layer.L3 or remote_port == self.port

    def __str__(self) -> str:
        port = f" {self.port}" if self.port is not None else ""
        return f"{self.layer.value} deny {self.direction.value} {self.address}{port}"


class FlowOutcome(Enum):
    DELIVERED = "Delivered"
    DENIED_IMMEDIATE = "DeniedImmediate"  # "Couldn't connect"
    DENIED_TIMEOUT = "DeniedTimeout"  # "Connection timed out"


@dataclass(frozen=True)
class FlowDecision:
    outcome: FlowOutcome
    # the blocked host sees the connection attempt (its SYN arrives)
    syn_observed: bool = False
    rule: Optional[FilterRule] = None


@dataclass(frozen=True)
class Packet:
    """A connection attempt across the filter.

    ``direction`` says who initiates: OUTBOUND means a local client opens a
    connection to ``dst``; INBOUND means ``src`` (remote) connects in.
    """

    src: ipaddress.IPv4Address
    dst: ipaddress.IPv4Address
    dstport: int
    direction: Direction = Direction.OUTBOUND

    @classmethod
    def make(cls, src: str, dst: str, dstport: int,
             direction: Union[str, Direction] = Direction.OUTBOUND) -> "Packet":
        return cls(ipaddress.IPv4Address(src), ipaddress.IPv4Address(dst), dstport,
                   Direction(direction))


def flow_decision(rules: Iterable[FilterRule], packet: Packet) -> FlowDecision:
    """Outcome of a TCP connection attempt; first matching deny decides.

    The handshake needs both directions: the SYN travels one way, the
    SYN-ACK the other. A deny on the initiating leg makes the attempt fail
    at once at the local side; a deny on the reply leg lets the SYN reach
    the remote host (which can log it) and the client waits for a timeout.
    """
    if packet.direction is Direction.OUTBOUND:
        remote, remote_port = packet.dst, packet.dstport
        legs = ((Direction.OUTBOUND, FlowOutcome.DENIED_IMMEDIATE, False),
                (Direction.INBOUND, FlowOutcome.DENIED_TIMEOUT, True))
    else:
        # remote client: its source port is ephemeral, so port rules on it miss
        remote, remote_port = packet.src, EPHEMERAL_PORT
        legs = ((Direction.INBOUND, FlowOutcome.DENIED_TIMEOUT, False),
                (Direction.OUTBOUND, FlowOutcome.DENIED_TIMEOUT, True))
    for rule in rules:
        for direction, outcome, observed in legs:
            if rule.matches(remote, remote_port, direction):
                return FlowDecision(outcome, observed, rule)
    return FlowDecision(FlowOutcome.DELIVERED)


def l4_restriction(rules: Iterable[FilterRule], ports: Iterable[int] = WEB_PORTS
                   ) -> list[FilterRule]:
    """Replace each L3 deny by L4 denies on ``ports`` for the same address."""
    out = []
    for rule in rules:
        if rule.layer is Layer.L3:
            out.extend(FilterRule(Layer.L4, rule.direction, rule.address, p) for p in ports)
        else:
            out.append(rule)
    return out


# ---- shared hosting --------------------------------------------------------

class HostingMap:
    """address -> [(name, site id)]; a site may be reachable under several names."""

    def __init__(self, entries: Iterable[tuple[str, str, str]] = ()):
        self.by_address: dict[ipaddress.IPv4Address, list[tuple[str, str]]] = defaultdict(list)
        for address, site, name in entries:
            self.add(address, site, name)

    def add(self, address: str, site: str, name: str) -> None:
        self.by_address[ipaddress.IPv4Address(address)].append((name, site))

    def sites_at(self, address: ipaddress.IPv4Address) -> set[str]:
        return {site for _, site in self.by_address.get(address, ())}

    def all_sites(self) -> set[str]:
        return {site for entries in self.by_address.values() for _, site in entries}

    def virtual_hosted(self, address: ipaddress.IPv4Address) -> bool:
        return len(self.sites_at(address)) > 1

    def shared_fraction(self) -> float:
        if not self.by_address:
            return 0.0
        return sum(self.virtual_hosted(a) for a in self.by_address) / len(self.by_address)


@dataclass(frozen=True)
class AddressCollateral:
    address: ipaddress.IPv4Address
    intended: frozenset
    collateral: frozenset


@dataclass(frozen=True)
class CollateralReport:
    addresses: tuple[AddressCollateral, ...]

    @property
    def collateral_sites(self) -> int:
        return sum(len(a.collateral) for a in self.addresses)

    @property
    def fraction_with_collateral(self) -> float:
        if not self.addresses:
            return 0.0
        return sum(bool(a.collateral) for a in self.addresses) / len(self.addresses)


def virtual_host_collateral(blocklist: Iterable[str], hosting: HostingMap) -> CollateralReport:
    """Sites hit by address-level blocking of every address serving ``blocklist``."""
    blocked = set(blocklist)
    unknown = blocked - hosting.all_sites()
    if unknown:
        raise RuleError("sites not in hosting map: " + ", ".join(sorted(unknown)))
    out = []
    for address in sorted(hosting.by_address):
        sites = hosting.sites_at(address)
        if sites & blocked:
            out.append(AddressCollateral(address, frozenset(sites & blocked),
                                         frozenset(sites - blocked)))
    return CollateralReport(tuple(out))


# ---- filtering proxies -----------------------------------------------------

class ProxyAction(Enum):
    DENY = "deny"
    REDIRECT = "redirect"


@dataclass(frozen=True)
class ProxyRule:
    scheme: Optional[str]
    host: str
    path_prefix: str
    action: ProxyAction
    redirect_to: Optional[str] = None

    def __post_init__(self) -> None:
        if (self.action is ProxyAction.REDIRECT) != (self.redirect_to is not None):
            raise RuleError("redirect rules, and only they, need a target url")

    @classmethod
    def parse(cls, pattern: str, action: ProxyAction, target: Optional[str] = None
              ) -> "ProxyRule":
        scheme, host, path = _split_url(pattern if "://" in pattern else "//" + pattern)
        return cls(scheme or None, host, path, action, target)


class ProxyOutcome(Enum):
    DELIVERED = "Delivered"
    DENIED = "Denied"
    REDIRECTED = "Redirected"


@dataclass(frozen=True)
class ProxyDecision:
    outcome: ProxyOutcome
    target: Optional[str] = None
    rule: Optional[ProxyRule] = None


def _split_url(url: str) -> tuple[str, str, str]:
    parts = urlsplit(url)
    if not parts.hostname:
        raise RuleError(f"cannot parse url {url!r}")
    return parts.scheme.lower(), parts.hostname.lower().rstrip("."), parts.path or "/"


def proxy_decision(rules: Iterable[ProxyRule], url: str) -> ProxyDecision:
    """Longest path prefix wins among rules for the URL's host (and scheme)."""
    scheme, host, path = _split_url(url)
    best = None
    for rule in rules:
        if rule.host != host or (rule.scheme and rule.scheme != scheme):
            continue
        if not path.startswith(rule.path_prefix):
            continue
        if best is None or len(rule.path_prefix) > len(best.path_prefix):
            best = rule
    if best is None:
        return ProxyDecision(ProxyOutcome.DELIVERED)
    if best.action is ProxyAction.DENY:
        return ProxyDecision(ProxyOutcome.DENIED, rule=best)
    return ProxyDecision(ProxyOutcome.REDIRECTED, best.redirect_to, best)


# ---- rule files ------------------------------------------------------------

@dataclass
class RuleSet:
    filters: list[FilterRule]
    proxies: list[ProxyRule]


def parse_rules(text: str, source: str = "<rules>") -> RuleSet:
    filters: list[FilterRule] = []
    proxies: list[ProxyRule] = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        words = line.split()
        try:
            kind = words[0].lower()
            if kind in ("l3", "l4"):
                want = 4 if kind == "l3" else 5
                if len(words) != want or words[1] != "deny":
                    raise RuleError(f"usage: {kind} deny <in|out> <addr>"
                                    + (" <port>" if kind == "l4" else ""))
                port = int(words[4]) if kind == "l4" else None
                filters.append(FilterRule(Layer(kind), Direction(words[2]),
                                          ipaddress.IPv4Address(words[3]), port))
            elif kind == "proxy":
                if len(words) < 3:
                    raise RuleError("usage: proxy deny|redirect <url-pattern> [target]")
                action = ProxyAction(words[1])
                target = words[3] if len(words) > 3 else None
                if len(words) > 4:
                    raise RuleError("too many fields")
                proxies.append(ProxyRule.parse(words[2], action, target))
            else:
                raise RuleError(f"unknown rule kind {words[0]!r}")
        except RuleError as exc:
            if exc.line is not None:
                raise
            raise RuleError(str(exc), lineno, source) from None
        except ValueError as exc:
            raise RuleError(str(exc), lineno, source) from None
    return RuleSet(filters, proxies)


def parse_hosting_map(text: str, source: str = "<hosting>") -> HostingMap:
    hosting = HostingMap()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].rstrip()
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != 3:
            raise RuleError("expected address<TAB>site<TAB>name", lineno, source)
        try:
            hosting.add(fields[0].strip(), fields[1].strip(), fields[2].strip())
        except ValueError as exc:
            raise RuleError(str(exc), lineno, source) from None
    return hosting


# ---- circumvention ---------------------------------------------------------

class Blocking(Enum):
    L3 = "L3"
    L4 = "L4"
    DNS_TAMPER = "DnsTamper"
    FILTER_PROXY = "FilterProxy"


class Circumvention(Enum):
    MIRRORING = "Mirroring"
    EXTRA_DOMAIN = "ExtraDomain"
    IP_CHANGE = "IpChange"
    PORT_CHANGE = "PortChange"
    WEB_SERVICE = "WebService"
    ARCHIVE_CACHE = "ArchiveCache"
    IP_TUNNEL = "IpTunnel"
    ALT_PROXY = "AltProxy"
    TRANS_NATIONAL_DIALIN = "TransNationalDialin"
    ENCRYPTION = "Encryption"
    DIRECT_IP = "DirectIp"


class Effect(Enum):
    DEFEATS = "Defeats"
    DEFEATS_CONDITIONALLY = "DefeatsConditionally"
    INEFFECTIVE = "Ineffective"


class UserEffort(Enum):
    TRANSPARENT = "Transparent"
    PER_USE = "PerUse"
    ONE_TIME_SETUP = "OneTimeSetup"
    PROHIBITIVE = "Prohibitive"


@dataclass(frozen=True)
class CircumventionScenario:
    blocking: Blocking
    circumvention: Circumvention


@dataclass(frozen=True)
class CircumventionResult:
    effect: Effect
    effort: UserEffort
    condition: Optional[str] = None

    def __str__(self) -> str:
        cond = f"({self.condition})" if self.condition else ""
        return f"{self.effect.value}{cond}/{self.effort.value}"


_B = Blocking
_C = Circumvention


def _r(effect: Effect, effort: UserEffort, condition: Optional[str] = None) -> CircumventionResult:
    return CircumventionResult(effect, effort, condition)


def _matrix() -> dict[tuple[Blocking, Circumvention], CircumventionResult]:
    D, DC, I = Effect.DEFEATS, Effect.DEFEATS_CONDITIONALLY, Effect.INEFFECTIVE
    T, PU, OS, PR = (UserEffort.TRANSPARENT, UserEffort.PER_USE, UserEffort.ONE_TIME_SETUP,
                     UserEffort.PROHIBITIVE)
    m = {}
    for b in Blocking:
        # content reachable under another name or address the block does not cover
        m[(b, _C.MIRRORING)] = _r(D, PU)
        m[(b, _C.WEB_SERVICE)] = _r(D, PU)
        m[(b, _C.ARCHIVE_CACHE)] = _r(D, PU)
        m[(b, _C.IP_TUNNEL)] = _r(DC, PR, "provider availability")
        m[(b, _C.ALT_PROXY)] = _r(D, OS)
        m[(b, _C.TRANS_NATIONAL_DIALIN)] = _r(DC, PR, "dial-up only")
    ip = (_B.L3, _B.L4)
    name_based = (_B.DNS_TAMPER, _B.FILTER_PROXY)
    for b in ip:
        m[(b, _C.EXTRA_DOMAIN)] = _r(I, PU)
        m[(b, _C.IP_CHANGE)] = _r(DC, T, "dns-propagation")
        m[(b, _C.DIRECT_IP)] = _r(I, PU)
    for b in name_based:
        m[(b, _C.EXTRA_DOMAIN)] = _r(D, PU)
        m[(b, _C.IP_CHANGE)] = _r(I, T)
        m[(b, _C.DIRECT_IP)] = _r(DC, PU, "not virtual_hosted")
    m[(_B.L3, _C.PORT_CHANGE)] = _r(I, PU)
    m[(_B.L4, _C.PORT_CHANGE)] = _r(D, PU)
    m[(_B.DNS_TAMPER, _C.PORT_CHANGE)] = _r(I, PU)
    m[(_B.FILTER_PROXY, _C.PORT_CHANGE)] = _r(DC, PU, "proxy not applied to the new port")
    m[(_B.L3, _C.ENCRYPTION)] = _r(I, OS)
    m[(_B.L4, _C.ENCRYPTION)] = _r(DC, OS, "encryption hiding the service port")
    m[(_B.DNS_TAMPER, _C.ENCRYPTION)] = _r(I, OS)
    m[(_B.FILTER_PROXY, _C.ENCRYPTION)] = _r(DC, OS, "rules finer than the host name")
    return m


CIRCUMVENTION_MATRIX = _matrix()


def circumvention_effect(scenario: CircumventionScenario) -> CircumventionResult:
    """Total over the 4 x 11 scenario space."""
    return CIRCUMVENTION_MATRIX[(scenario.blocking, scenario.circumvention)]


def virtual_hosted_effect(scenario: CircumventionScenario, virtual_hosted: bool
                          ) -> CircumventionResult:
    """Resolve the virtual-hosting condition for a concrete target."""
    result = circumvention_effect(scenario)
    if result.condition == "not virtual_hosted":
        effect = Effect.INEFFECTIVE if virtual_hosted else Effect.DEFEATS
        return CircumventionResult(effect, result.effort)
    return result


def render_matrix() -> str:
    width = max(len(c.value) for c in Circumvention)
    cells = {k: str(v) for k, v in CIRCUMVENTION_MATRIX.items()}
    colw = {b: max(len(b.value), *(len(cells[(b, c)]) for c in Circumvention)) for b in Blocking}
    lines = ["  ".join([" " * width] + [b.value.ljust(colw[b]) for b in Blocking]).rstrip()]
    for c in Circumvention:
        row = [c.value.ljust(width)] + [cells[(b, c)].ljust(colw[b]) for b in Blocking]
        lines.append("  ".join(row).rstrip())
    return "\n".join(lines) + "\n"

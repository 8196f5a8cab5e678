"""Tampering policies applied inside a simulated recursive resolver.

A policy pairs a scope (whole zone, single name, single record) with one of
six techniques. Every policy also implies a *shadow zone*: the resolver
claims local authority over the zone the policy lives in, so any query
inside that zone that no policy matches is answered from the shadow data
(copied records, back-referenced delegations) and never from the real
authoritative servers. That is where collateral blocking comes from.

Policy text format, one directive per line, ``#`` comments::

    zone   <apex> <technique> [target]
    name   <fqdn> <technique> [target]
    record <fqdn> <rtype> <technique> [target]
    copy   <fqdn> <rtype> [data...]     # no data: snapshot of live data at build
    backref <subdomain-apex>
    staleness <seconds>

Techniques: refused nxdomain hijack astray silence servfail.
"""

from __future__ import annotations

import dataclasses
import ipaddress
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Protocol, Sequence, Union

from .model import (
    AData,
    CNAMEData,
    DnsError,
    DnsMessage,
    DomainName,
    MXData,
    NSData,
    Rcode,
    RecordType,
    ResourceRecord,
    SOAData,
    canonicalize,
    parse_rdata,
)

FABRICATED_TTL = 3600
SHADOW_SOA = SOAData(DomainName(("localhost",)), DomainName(("hostmaster", "localhost")),
                     1, 10800, 3600, 604800, 3600)
SHADOW_NS = NSData(DomainName(("localhost",)))


class PolicyError(DnsError):
    def __init__(self, message: str, line: Optional[int] = None, source: str = "<policy>"):
        where = f"{source}:{line}: " if line is not None else ""
        super().__init__(where + message)
        self.line = line


class Technique(Enum):
    REFUSED = "refused"
    NXDOMAIN = "nxdomain"
    HIJACK = "hijack"
    ASTRAY = "astray"
    SILENCE = "silence"
    SERVFAIL = "servfail"


Target = Union[ipaddress.IPv4Address, DomainName]


def parse_target(text: str) -> Target:
    try:
        return ipaddress.IPv4Address(text)
    except ValueError:
        return canonicalize(text)


@dataclass(frozen=True)
class TamperTechnique:
    kind: Technique
    target: Optional[Target] = None

    def __post_init__(self) -> None:
        if self.kind is Technique.HIJACK and self.target is None:
            raise PolicyError("hijack needs a target address or name")
        if self.kind is Technique.ASTRAY and not isinstance(self.target, ipaddress.IPv4Address):
            raise PolicyError("astray needs a target IPv4 address")
        if self.kind not in (Technique.HIJACK, Technique.ASTRAY) and self.target is not None:
            raise PolicyError(f"{self.kind.value} takes no target")

    def __str__(self) -> str:
        return self.kind.value + (f" {self.target}" if self.target is not None else "")


class ScopeMode(Enum):
    WHOLE_ZONE = "zone"
    SINGLE_NAME = "name"
    SINGLE_RECORD = "record"


# techniques BIND-style zone configuration can apply to one record type only
RECORD_CAPABLE = frozenset({Technique.NXDOMAIN, Technique.HIJACK, Technique.ASTRAY,
                            Technique.SERVFAIL})


@dataclass(frozen=True)
class TamperScope:
    mode: ScopeMode
    name: DomainName
    rtype: Optional[RecordType] = None

    def __post_init__(self) -> None:
        if (self.mode is ScopeMode.SINGLE_RECORD) != (self.rtype is not None):
            raise PolicyError("only record scopes carry a record type")
        if self.rtype is RecordType.ANY:
            raise PolicyError("record scope needs a concrete record type")

    def matches(self, qname: DomainName, qtype: RecordType) -> bool:
        if self.mode is ScopeMode.WHOLE_ZONE:
            return qname.is_subdomain_of(self.name)
        if self.mode is ScopeMode.SINGLE_NAME:
            return qname == self.name
        return qname == self.name and qtype in (self.rtype, RecordType.ANY)

    def __str__(self) -> str:
        if self.mode is ScopeMode.SINGLE_RECORD:
            return f"record {self.name} {self.rtype.name}"
        return f"{self.mode.value} {self.name}"


@dataclass(frozen=True)
class ShadowConfig:
    copied_records: tuple[ResourceRecord, ...] = ()
    delegation_backrefs: tuple[DomainName, ...] = ()
    staleness: float = 0.0


@dataclass(frozen=True)
class TamperPolicy:
    scope: TamperScope
    technique: TamperTechnique
    shadow: ShadowConfig = field(default_factory=ShadowConfig)
    # apex of the shadow zone; record scopes resolve it against the zone tree
    zone: Optional[DomainName] = None

    def __post_init__(self) -> None:
        if (self.scope.mode is ScopeMode.SINGLE_RECORD
                and self.technique.kind not in RECORD_CAPABLE):
            raise PolicyError(
                f"{self.technique.kind.value} cannot target a single record type; "
                "it affects every record of the name")
        if (self.scope.rtype is RecordType.MX and self.technique.kind is Technique.HIJACK
                and not isinstance(self.technique.target, DomainName)):
            raise PolicyError("MX hijack needs an exchange name as target")

    @property
    def shadow_apex(self) -> DomainName:
        if self.zone is not None:
            return self.zone
        return self.scope.name

    def under_backref(self, qname: DomainName) -> bool:
        return any(qname.is_subdomain_of(b) and b != self.shadow_apex
                   and b.is_subdomain_of(self.shadow_apex)
                   for b in self.shadow.delegation_backrefs)

    def __str__(self) -> str:
        return f"{self.scope} {self.technique}"


class _Silence:
    """Marker returned instead of a message: the resolver must not answer."""

    def __repr__(self) -> str:
        return "SILENCE"


SILENCE = _Silence()


def find_policy(policies: Sequence[TamperPolicy], qname: DomainName,
                qtype: RecordType) -> Optional[TamperPolicy]:
    for p in policies:
        if p.scope.mode is ScopeMode.WHOLE_ZONE and p.under_backref(qname):
            continue
        if p.scope.matches(qname, qtype):
            return p
    return None


def find_shadow(policies: Sequence[TamperPolicy], qname: DomainName) -> Optional[TamperPolicy]:
    """The first policy whose shadow zone contains ``qname``, if any."""
    for p in policies:
        if qname.is_subdomain_of(p.shadow_apex) and not p.under_backref(qname):
            return p
    return None


def apply_tamper(policies: Sequence[TamperPolicy], q: tuple[DomainName, RecordType],
                 authoritative_answer: DnsMessage) -> Union[DnsMessage, _Silence]:
    """Answer ``q`` the way a resolver configured with ``policies`` would.

    ``authoritative_answer`` is the untampered response; it is returned
    unchanged when no policy matches and no shadow zone covers the name.
    """
    qname, qtype = q
    policy = find_policy(policies, qname, qtype)
    if policy is not None:
        return _apply(policy, policies, qname, qtype, authoritative_answer)
    shadow = find_shadow(policies, qname)
    if shadow is not None:
        return _shadow_answer(shadow, policies, qname, qtype, authoritative_answer)
    return authoritative_answer


def _apply(policy: TamperPolicy, policies: Sequence[TamperPolicy], qname: DomainName,
           qtype: RecordType, auth: DnsMessage) -> Union[DnsMessage, _Silence]:
    kind = policy.technique.kind
    target = policy.technique.target
    if kind is Technique.SILENCE:
        return SILENCE
    if kind is Technique.REFUSED:
        return auth.reply(Rcode.REFUSED)
    if kind is Technique.SERVFAIL:
        return auth.reply(Rcode.SERVFAIL)
    if kind in (Technique.HIJACK, Technique.ASTRAY):
        if qtype is RecordType.ANY and policy.scope.rtype is not None:
            qtype = policy.scope.rtype  # ANY under a record scope fakes that record
        fabricated = _fabricate(qname, qtype, target)
        if fabricated is not None:
            return auth.reply(Rcode.NOERROR, [fabricated], aa=True)
    return _shadow_answer(policy, policies, qname, qtype, auth)


def _fabricate(qname: DomainName, qtype: RecordType,
               target: Target) -> Optional[ResourceRecord]:
    if isinstance(target, ipaddress.IPv4Address):
        if qtype in (RecordType.A, RecordType.ANY):
            return ResourceRecord(qname, RecordType.A, FABRICATED_TTL, AData(target))
        return None
    if qtype in (RecordType.A, RecordType.ANY, RecordType.CNAME):
        return ResourceRecord(qname, RecordType.CNAME, FABRICATED_TTL, CNAMEData(target))
    if qtype is RecordType.MX:
        return ResourceRecord(qname, RecordType.MX, FABRICATED_TTL, MXData(10, target))
    return None


def _exists_in_shadow(policies: Sequence[TamperPolicy], shadow: ShadowConfig,
                      qname: DomainName) -> bool:
    for p in policies:
        if p.scope.mode is not ScopeMode.WHOLE_ZONE and p.scope.name.is_subdomain_of(qname):
            return True
    return any(r.name.is_subdomain_of(qname) for r in shadow.copied_records)


def _shadow_answer(policy: TamperPolicy, policies: Sequence[TamperPolicy], qname: DomainName,
                   qtype: RecordType, auth: DnsMessage) -> DnsMessage:
    apex = policy.shadow_apex
    copies = [r for r in policy.shadow.copied_records if r.name == qname]
    if copies:
        if qtype is RecordType.ANY:
            answers = copies
        else:
            answers = [r for r in copies if r.rtype is qtype]
            if not answers and qtype is not RecordType.CNAME:
                answers = [r for r in copies if r.rtype is RecordType.CNAME]
        return auth.reply(Rcode.NOERROR, answers, aa=True)
    if qname == apex:
        if qtype is RecordType.SOA:
            return auth.reply(Rcode.NOERROR, [
                ResourceRecord(apex, RecordType.SOA, FABRICATED_TTL, SHADOW_SOA)], aa=True)
        if qtype is RecordType.NS:
            return auth.reply(Rcode.NOERROR, [
                ResourceRecord(apex, RecordType.NS, FABRICATED_TTL, SHADOW_NS)], aa=True)
        return auth.reply(Rcode.NOERROR, [], aa=True)
    if _exists_in_shadow(policies, policy.shadow, qname):
        return auth.reply(Rcode.NOERROR, [], aa=True)
    return auth.reply(Rcode.NXDOMAIN, [], aa=True)


class ZoneSource(Protocol):
    def zone_apex_for(self, name: DomainName) -> DomainName: ...

    def records_at(self, name: DomainName, rtype: RecordType) -> list[ResourceRecord]: ...


def load_policy_file(text: str, tree: Optional[ZoneSource] = None,
                     source: str = "<policy>") -> list[TamperPolicy]:
    """Parse policy text into an ordered list of policies.

    ``tree`` is needed for record scopes (to find their enclosing zone) and
    for data-less ``copy`` lines (snapshotted from the live data now).
    Without it, record scopes shadow only their own name.
    """
    pending: list[tuple[int, TamperScope, TamperTechnique]] = []
    copies: list[ResourceRecord] = []
    backrefs: list[DomainName] = []
    staleness = 0.0
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        word, *args = line.split()
        try:
            if word in ("zone", "name"):
                if len(args) not in (2, 3):
                    raise PolicyError(f"usage: {word} <name> <technique> [target]")
                mode = ScopeMode.WHOLE_ZONE if word == "zone" else ScopeMode.SINGLE_NAME
                scope = TamperScope(mode, canonicalize(args[0]))
                pending.append((lineno, scope, _technique(args[1], args[2:])))
            elif word == "record":
                if len(args) not in (3, 4):
                    raise PolicyError("usage: record <fqdn> <rtype> <technique> [target]")
                scope = TamperScope(ScopeMode.SINGLE_RECORD, canonicalize(args[0]),
                                    RecordType.parse(args[1]))
                pending.append((lineno, scope, _technique(args[2], args[3:])))
            elif word == "copy":
                if len(args) < 2:
                    raise PolicyError("usage: copy <fqdn> <rtype> [data...]")
                name, rtype = canonicalize(args[0]), RecordType.parse(args[1])
                if rtype is RecordType.ANY:
                    raise PolicyError("copy needs a concrete record type")
                if len(args) == 2:
                    if tree is None:
                        raise PolicyError("snapshot copy needs a zone tree")
                    copies.extend(tree.records_at(name, rtype))
                else:
                    copies.append(ResourceRecord(name, rtype, FABRICATED_TTL,
                                                 parse_rdata(rtype, args[2:])))
            elif word == "backref":
                if len(args) != 1:
                    raise PolicyError("usage: backref <subdomain-apex>")
                backrefs.append(canonicalize(args[0]))
            elif word == "staleness":
                if len(args) != 1:
                    raise PolicyError("usage: staleness <seconds>")
                staleness = float(args[0])
            else:
                raise PolicyError(f"unknown directive {word!r}")
        except PolicyError as exc:
            if exc.line is not None:
                raise
            raise PolicyError(str(exc), lineno, source) from None
        except (DnsError, ValueError) as exc:
            raise PolicyError(str(exc), lineno, source) from None

    shadow = ShadowConfig(tuple(copies), tuple(backrefs), staleness)
    policies = []
    for lineno, scope, technique in pending:
        zone = None
        if scope.mode is ScopeMode.SINGLE_RECORD and tree is not None:
            zone = tree.zone_apex_for(scope.name)
        try:
            policies.append(TamperPolicy(scope, technique, shadow, zone))
        except PolicyError as exc:
            raise PolicyError(str(exc), lineno, source) from None
    return policies


def _technique(word: str, rest: list[str]) -> TamperTechnique:
    try:
        kind = Technique(word.lower())
    except ValueError:
        raise PolicyError(f"unknown technique {word!r}") from None
    if len(rest) > 1:
        raise PolicyError("too many arguments")
    target = parse_target(rest[0]) if rest else None
    return TamperTechnique(kind, target)


def bind_zones(policies: Sequence[TamperPolicy], tree: ZoneSource) -> list[TamperPolicy]:
    """Resolve the shadow apex of record-scoped policies against ``tree``."""
    out = []
    for p in policies:
        if p.scope.mode is ScopeMode.SINGLE_RECORD and p.zone is None:
            p = dataclasses.replace(p, zone=tree.zone_apex_for(p.scope.name))
        out.append(p)
    return out


def dump_policies(policies: Sequence[TamperPolicy]) -> str:
    """Render policies back to policy text (copies inline, order kept)."""
    lines = [str(p) for p in policies]
    if policies:
        shadow = policies[0].shadow
        for rr in shadow.copied_records:
            lines.append(f"copy {rr.name} {rr.rtype.name} {rr.data}")
        lines.extend(f"backref {b}" for b in shadow.delegation_backrefs)
        if shadow.staleness:
            lines.append(f"staleness {shadow.staleness:g}")
    return "\n".join(lines) + "\n"

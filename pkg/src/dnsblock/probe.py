"""Probe resolvers, compare replies with reference data and classify them.

Screening follows a fixed ladder: timeouts and undecodable replies first,
then the reply status (REFUSED, SERVFAIL, NXDOMAIN, empty NOERROR), then a
field-by-field comparison against the reference reply in which TTLs and MX
preferences are allowed to differ. Replies that still differ are split into
astrayment (answer points at a special address) and suspected hijacking.
"""

from __future__ import annotations

import ipaddress
import json
import random
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence, Union

from . import wire
from .model import (
    AData,
    CNAMEData,
    DnsError,
    DnsHeader,
    DomainName,
    MXData,
    Question,
    Rcode,
    RecordType,
    ResourceRecord,
    canonicalize,
)
from .simnet import AuthoritativeTree, Network, StubClient

DEFAULT_RTYPES = (RecordType.A, RecordType.ANY, RecordType.MX, RecordType.NS, RecordType.SOA)
TRANSCRIPT_SCHEMA = "dnsblock.transcript"
TRANSCRIPT_VERSION = 1

# header fields that must agree; "status" is dig's name for rcode
COMPARED_HEADER_FIELDS = ("ancount", "opcode", "qr", "rcode", "rd", "tc")


class ClassificationError(DnsError):
    pass


class AggregationError(DnsError):
    pass


class SchemaError(DnsError):
    pass


class VerdictClass(Enum):
    UNTAMPERED = "Untampered"
    REFUSED = "Refused"
    NXDOMAIN_FORGED = "NxdomainForged"
    EMPTY_ANSWER = "EmptyAnswer"
    HIJACK_SUSPECT = "HijackSuspect"
    ASTRAYMENT = "Astrayment"
    SILENCE_TIMEOUT = "SilenceTimeout"
    SERVFAIL = "ServFail"
    PROTOCOL_ERROR = "ProtocolError"


Evidence = tuple[str, str, str]  # (field, expected, observed)


@dataclass(frozen=True)
class Comparison:
    matched: bool
    evidence: tuple[Evidence, ...] = ()

    def __bool__(self) -> bool:
        return self.matched


@dataclass(frozen=True)
class Verdict:
    kind: VerdictClass
    evidence: tuple[Evidence, ...] = ()
    # observed address (or CNAME/MX target when no address) for hijack/astray
    target: Optional[str] = None
    raw: Optional[str] = None

    def __post_init__(self) -> None:
        if (not self.evidence and self.kind not in (VerdictClass.UNTAMPERED,
                                                    VerdictClass.SILENCE_TIMEOUT)):
            raise ValueError(f"{self.kind.value} verdict needs evidence")

    @property
    def tampered(self) -> bool:
        return self.kind is not VerdictClass.UNTAMPERED


class SpecialAddresses:
    """Predicate for addresses nobody should be sent to (astrayment targets)."""

    DEFAULT = ("0.0.0.0/8", "127.0.0.0/8", "10.0.0.0/8", "172.16.0.0/12", "192.168.0.0/16")

    def __init__(self, networks: Iterable[str] = DEFAULT, unannounced: Iterable[str] = ()):
        self.networks = tuple(ipaddress.IPv4Network(n) for n in (*networks, *unannounced))

    def __call__(self, address: Union[str, ipaddress.IPv4Address]) -> bool:
        addr = ipaddress.IPv4Address(address)
        return any(addr in net for net in self.networks)


def compare_headers(expected: DnsHeader, observed: DnsHeader) -> Comparison:
    evidence = [(f, str(getattr(expected, f)), str(getattr(observed, f)))
                for f in COMPARED_HEADER_FIELDS
                if getattr(expected, f) != getattr(observed, f)]
    matched = not evidence
    if expected.aa != observed.aa:
        # recorded, never decisive
        evidence.append(("aa", str(expected.aa), str(observed.aa)))
    return Comparison(matched, tuple(evidence))


def record_key(rr: ResourceRecord) -> tuple:
    """Total order on records: owner (DNS order), type code, then data."""
    data = rr.data
    if isinstance(data, AData):
        dkey: tuple = (int(data.address),)
    elif isinstance(data, MXData):
        dkey = (data.exchange.sort_key(), data.preference)
    elif isinstance(data, CNAMEData) or hasattr(data, "target"):
        dkey = (data.target.sort_key(),)
    else:
        dkey = (data.mname.sort_key(), data.rname.sort_key(), data.serial, data.refresh,
                data.retry, data.expire, data.minimum)
    return (rr.name.sort_key(), int(rr.rtype), dkey)


def _tolerant_key(rr: ResourceRecord) -> tuple:
    name, rtype, dkey = record_key(rr)
    if isinstance(rr.data, MXData):
        dkey = dkey[:1]
    return (name, rtype, dkey)


def compare_answers(expected: Sequence[ResourceRecord],
                    observed: Sequence[ResourceRecord]) -> Comparison:
    """Equality modulo TTL values and MX preferences."""
    exp = sorted(_tolerant_key(r) for r in expected)
    obs = sorted(_tolerant_key(r) for r in observed)
    if exp == obs:
        return Comparison(True)
    missing = [r for r in sorted(expected, key=record_key)
               if _tolerant_key(r) not in obs]
    extra = [r for r in sorted(observed, key=record_key)
             if _tolerant_key(r) not in exp]
    evidence = [(f"answer {r.name} {r.rtype.name}", str(r.data), "-") for r in missing]
    evidence += [(f"answer {r.name} {r.rtype.name}", "-", str(r.data)) for r in extra]
    if not evidence:
        evidence = [("answer multiset", str(len(expected)), str(len(observed)))]
    return Comparison(False, tuple(evidence))


@dataclass(frozen=True)
class ProbeResult:
    """One probe as recorded in a transcript (before classification)."""

    provider: str
    resolver: str
    name: DomainName
    rtype: RecordType
    raw: Optional[bytes]
    rtt: float

    @property
    def timed_out(self) -> bool:
        return self.raw is None


class ReferenceSet(dict):
    """(name, rtype) -> expected reply from a resolver known to be clean."""

    @classmethod
    def from_tree(cls, tree: AuthoritativeTree, names: Iterable[DomainName],
                  rtypes: Iterable[RecordType] = DEFAULT_RTYPES) -> "ReferenceSet":
        ref = cls()
        rtypes = tuple(rtypes)
        for name in names:
            for rtype in rtypes:
                ref[(name, rtype)] = tree.answer((name, rtype))
        return ref

    def to_json(self) -> list:
        return [{"name": str(n), "rtype": t.name, "raw": wire.encode(m).hex()}
                for (n, t), m in sorted(self.items(), key=lambda kv: (kv[0][0].sort_key(),
                                                                      kv[0][1]))]

    @classmethod
    def from_json(cls, items: list) -> "ReferenceSet":
        ref = cls()
        for item in items:
            ref[(canonicalize(item["name"]), RecordType[item["rtype"]])] = wire.decode(
                bytes.fromhex(item["raw"]))
        return ref


def _first_target(answers: Sequence[ResourceRecord], special: SpecialAddresses) -> Optional[str]:
    addrs = [r.data.address for r in answers if isinstance(r.data, AData)]
    for a in addrs:
        if special(a):
            return str(a)
    if addrs:
        return str(addrs[0])
    for r in answers:
        if isinstance(r.data, MXData):
            return str(r.data.exchange)
        if hasattr(r.data, "target"):
            return str(r.data.target)
    return None


def classify(probe: ProbeResult, reference: Mapping, special: Optional[SpecialAddresses] = None
             ) -> Verdict:
    """Classify one probe against ``reference``. Deterministic and total."""
    special = special or SpecialAddresses()
    expected = reference.get((probe.name, probe.rtype))
    if expected is None:
        raise ClassificationError(f"no reference data for {probe.name} {probe.rtype.name}")
    raw_hex = probe.raw.hex() if probe.raw is not None else None
    if probe.raw is None:
        return Verdict(VerdictClass.SILENCE_TIMEOUT, raw=raw_hex)
    try:
        observed = wire.decode(probe.raw)
    except wire.DecodeError as exc:
        return Verdict(VerdictClass.PROTOCOL_ERROR, (("decode", "valid message", str(exc)),),
                       raw=raw_hex)
    if observed.question != Question(probe.name, probe.rtype):
        return Verdict(VerdictClass.PROTOCOL_ERROR,
                       (("question", f"{probe.name} {probe.rtype.name}",
                         str(observed.question)),), raw=raw_hex)
    exp_rcode, obs_rcode = expected.header.rcode, observed.header.rcode
    rcode_ev = (("rcode", exp_rcode.name, obs_rcode.name),)
    if obs_rcode is Rcode.REFUSED:
        return Verdict(VerdictClass.REFUSED, rcode_ev, raw=raw_hex)
    if obs_rcode is Rcode.SERVFAIL:
        return Verdict(VerdictClass.SERVFAIL, rcode_ev, raw=raw_hex)
    if obs_rcode is Rcode.NXDOMAIN and exp_rcode is Rcode.NOERROR:
        return Verdict(VerdictClass.NXDOMAIN_FORGED, rcode_ev, raw=raw_hex)
    if obs_rcode is Rcode.NOERROR and not observed.answers and expected.answers:
        return Verdict(VerdictClass.EMPTY_ANSWER,
                       (("ancount", str(expected.header.ancount), "0"),), raw=raw_hex)
    headers = compare_headers(expected.header, observed.header)
    answers = compare_answers(expected.answers, observed.answers)
    if headers and answers:
        return Verdict(VerdictClass.UNTAMPERED, headers.evidence, raw=raw_hex)
    evidence = tuple(e for e in headers.evidence if e[0] != "aa") + answers.evidence
    evidence = evidence or headers.evidence
    target = _first_target(observed.answers, special)
    is_special = any(isinstance(r.data, AData) and special(r.data.address)
                     for r in observed.answers)
    if not answers and is_special:
        return Verdict(VerdictClass.ASTRAYMENT, evidence, target, raw_hex)
    return Verdict(VerdictClass.HIJACK_SUSPECT, evidence, target, raw_hex)


@dataclass(frozen=True)
class Target:
    address: str
    provider: str


@dataclass
class ProbePlan:
    targets: list[Target]
    names: list[DomainName]
    rtypes: tuple[RecordType, ...] = DEFAULT_RTYPES
    timeout: float = 2.0
    retries: int = 1
    concurrency: int = 16
    seed: int = 0

    def probes(self) -> list[tuple[Target, DomainName, RecordType]]:
        return [(t, n, r) for t in self.targets for n in self.names for r in self.rtypes]


def run_probes(plan: ProbePlan, network: Network) -> list[ProbeResult]:
    """Send every (target, name, rtype) probe; order of the result is fixed.

    Each probe draws from its own RNG seeded by (seed, probe, attempt), so
    the outcome does not depend on completion order.
    """
    def one(item):
        target, name, rtype = item
        client = StubClient(network, plan.seed)
        elapsed = 0.0
        for attempt in range(plan.retries + 1):
            rng = random.Random(f"{plan.seed}:{target.address}:{name}:{rtype.name}:{attempt}")
            ex = client.exchange(target.address, Question(name, rtype), rng)
            elapsed += ex.rtt
            if not ex.timed_out:
                return ProbeResult(target.provider, target.address, name, rtype, ex.raw, ex.rtt)
        return ProbeResult(target.provider, target.address, name, rtype, None, elapsed)

    probes = plan.probes()
    with ThreadPoolExecutor(max_workers=max(1, plan.concurrency)) as pool:
        return list(pool.map(one, probes))


class ProviderCategory(Enum):
    UNTAMPERED = "Untampered"
    HIJACK_NXDOMAIN_COMBO = "HijackNxdomainCombo"
    NXDOMAIN_ONLY = "NxdomainOnly"
    WWW_ONLY_HIJACK = "WwwOnlyHijack"
    SPECIAL = "Special"


@dataclass
class ProviderReport:
    provider: str
    verdicts: dict[tuple[DomainName, RecordType], Verdict]
    category: ProviderCategory = ProviderCategory.UNTAMPERED
    resolvers: list[str] = field(default_factory=list)

    def verdict(self, name: DomainName, rtype: RecordType) -> Verdict:
        return self.verdicts[(name, rtype)]


NEGATIVE = (VerdictClass.NXDOMAIN_FORGED, VerdictClass.EMPTY_ANSWER)
REDIRECTING = (VerdictClass.HIJACK_SUSPECT, VerdictClass.ASTRAYMENT)


# record types that feed the provider grouping
CATEGORY_RTYPES = (RecordType.A, RecordType.MX)


def derive_category(verdicts: Mapping[tuple[DomainName, RecordType], Verdict],
                    zone: DomainName) -> ProviderCategory:
    """Group a provider by what its A and MX answers look like inside ``zone``."""
    www = zone.child("www")
    in_zone = {k: v for k, v in verdicts.items()
               if k[0].is_subdomain_of(zone) and k[1] in CATEGORY_RTYPES}
    if all(not v.tampered for v in in_zone.values()):
        return ProviderCategory.UNTAMPERED
    www_v = {k: v for k, v in in_zone.items() if k[0] == www}
    rest = {k: v for k, v in in_zone.items() if k[0] != www}
    if all(not v.tampered for v in rest.values()) and any(v.tampered for v in www_v.values()):
        return ProviderCategory.WWW_ONLY_HIJACK
    if all(v.kind in NEGATIVE for v in in_zone.values()):
        return ProviderCategory.NXDOMAIN_ONLY
    www_a = www_v.get((www, RecordType.A))
    others = [v for k, v in in_zone.items() if k != (www, RecordType.A)]
    if www_a is not None and www_a.kind in REDIRECTING and all(v.kind in NEGATIVE for v in others):
        return ProviderCategory.HIJACK_NXDOMAIN_COMBO
    return ProviderCategory.SPECIAL


def aggregate(verdicts: Iterable[tuple[ProbeResult, Verdict]], provider_map: Mapping[str, str],
              zone: Union[str, DomainName] = "stormfront.org") -> list[ProviderReport]:
    """Group verdicts per provider; a provider tampers if any of its resolvers does.

    When resolvers disagree, the tampered verdict of the lexicographically
    first resolver wins, so the output is independent of probe order.
    """
    zone = canonicalize(zone)
    per_provider: dict[str, dict[tuple, list[tuple[str, Verdict]]]] = defaultdict(
        lambda: defaultdict(list))
    resolvers: dict[str, set[str]] = defaultdict(set)
    unmapped = set()
    for probe, verdict in verdicts:
        provider = provider_map.get(probe.resolver)
        if provider is None:
            unmapped.add(probe.resolver)
            continue
        per_provider[provider][(probe.name, probe.rtype)].append((probe.resolver, verdict))
        resolvers[provider].add(probe.resolver)
    if unmapped:
        raise AggregationError("resolver addresses missing from provider map: "
                               + ", ".join(sorted(unmapped)))
    reports = []
    for provider in sorted(per_provider):
        merged = {}
        for key, entries in per_provider[provider].items():
            entries.sort(key=lambda e: e[0])
            tampered = [v for _, v in entries if v.tampered]
            merged[key] = tampered[0] if tampered else entries[0][1]
        reports.append(ProviderReport(provider, merged, derive_category(merged, zone),
                                      sorted(resolvers[provider])))
    return reports


# ---- transcripts -----------------------------------------------------------

def transcript_header() -> dict:
    return {"schema": TRANSCRIPT_SCHEMA, "version": TRANSCRIPT_VERSION}


def write_transcript(path: Union[str, Path], probes: Sequence[ProbeResult],
                     verdicts: Optional[Sequence[Verdict]] = None) -> None:
    lines = [json.dumps(transcript_header(), sort_keys=True)]
    for i, p in enumerate(probes):
        v = verdicts[i] if verdicts is not None else None
        lines.append(json.dumps({
            "provider": p.provider,
            "resolver": p.resolver,
            "name": str(p.name),
            "rtype": p.rtype.name,
            "verdict": v.kind.value if v else None,
            "target": v.target if v else None,
            "evidence": [list(e) for e in v.evidence] if v else [],
            "rtt": round(p.rtt, 6),
            "raw": p.raw.hex() if p.raw is not None else None,
        }, sort_keys=True))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_transcript(path: Union[str, Path]) -> list[tuple[ProbeResult, Optional[Verdict]]]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        raise SchemaError(f"{path}: empty file, expected a schema header")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError:
        raise SchemaError(f"{path}: line 1 is not a schema header") from None
    if header.get("schema") != TRANSCRIPT_SCHEMA or header.get("version") != TRANSCRIPT_VERSION:
        raise SchemaError(f"{path}: expected {TRANSCRIPT_SCHEMA} v{TRANSCRIPT_VERSION}, "
                          f"found {header.get('schema')} v{header.get('version')}")
    out = []
    for lineno, line in enumerate(lines[1:], 2):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            probe = ProbeResult(rec["provider"], rec["resolver"], canonicalize(rec["name"]),
                                RecordType[rec["rtype"]],
                                bytes.fromhex(rec["raw"]) if rec["raw"] is not None else None,
                                float(rec["rtt"]))
            verdict = None
            if rec.get("verdict"):
                verdict = Verdict(VerdictClass(rec["verdict"]),
                                  tuple(tuple(e) for e in rec["evidence"]),
                                  rec.get("target"), rec["raw"])
        except (KeyError, ValueError, TypeError, json.JSONDecodeError, DnsError) as exc:
            raise SchemaError(f"{path}:{lineno}: bad transcript record ({exc})") from None
        out.append((probe, verdict))
    return out


def load_provider_map(path: Union[str, Path]) -> dict[str, str]:
    """``address<TAB>provider-name`` lines; ``#`` comments allowed."""
    mapping = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].rstrip()
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2 or not parts[0].strip() or not parts[1].strip():
            raise SchemaError(f"{path}:{lineno}: expected address<TAB>provider")
        mapping[parts[0].strip()] = parts[1].strip()
    return mapping

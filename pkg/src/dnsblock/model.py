"""Domain types for DNS names, records and messages.

All types are frozen dataclasses; they can be shared between threads freely.
"""

from __future__ import annotations

import dataclasses
import ipaddress
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Iterable, Union

MAX_LABEL = 63
MAX_NAME = 255


class DnsError(Exception):
    pass


class InvalidName(DnsError):
    """Illegal domain name (empty label, label or name too long)."""


class RecordType(IntEnum):
    A = 1
    NS = 2
    CNAME = 5
    SOA = 6
    MX = 15
    ANY = 255

    @classmethod
    def parse(cls, text: str) -> "RecordType":
        try:
            return cls[text.strip().upper()]
        except KeyError:
            raise DnsError(f"unknown record type {text!r}") from None


class Opcode(IntEnum):
    QUERY = 0


class Rcode(IntEnum):
    NOERROR = 0
    SERVFAIL = 2
    NXDOMAIN = 3
    REFUSED = 5


@dataclass(frozen=True, order=True)
class DomainName:
    """A fully qualified, lowercase domain name stored as a tuple of labels.

    The root is the empty tuple. Ordering compares label tuples left to
    right, which is only used to get a stable sort; use :meth:`sort_key`
    for DNS canonical (right-to-left) ordering.
    """

    labels: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        labels = tuple(label.lower() for label in self.labels)
        wire_len = 1
        for label in labels:
            if not label:
                raise InvalidName("empty label")
            if "." in label:
                raise InvalidName(f"label contains a dot: {label!r}")
            try:
                size = len(label.encode("ascii"))
            except UnicodeEncodeError:
                raise InvalidName(f"non-ascii label {label!r}") from None
            if size > MAX_LABEL:
                raise InvalidName(f"label longer than {MAX_LABEL} octets: {label[:16]}...")
            wire_len += size + 1
        if wire_len > MAX_NAME:
            raise InvalidName(f"name longer than {MAX_NAME} octets")
        object.__setattr__(self, "labels", labels)

    def __str__(self) -> str:
        if not self.labels:
            return "."
        return ".".join(self.labels) + "."

    def __repr__(self) -> str:
        return f"DomainName({str(self)!r})"

    @property
    def is_root(self) -> bool:
        return not self.labels

    def parent(self) -> "DomainName":
        if not self.labels:
            raise InvalidName("root has no parent")
        return DomainName(self.labels[1:])

    def child(self, label: str) -> "DomainName":
        return DomainName((label,) + self.labels)

    def is_subdomain_of(self, parent: "DomainName") -> bool:
        """True iff ``parent``'s labels are a suffix of ours (reflexive)."""
        n = len(parent.labels)
        if n > len(self.labels):
            return False
        return n == 0 or self.labels[-n:] == parent.labels

    def ancestors(self) -> Iterable["DomainName"]:
        """Yield self, parent, ..., root."""
        for i in range(len(self.labels) + 1):
            yield DomainName(self.labels[i:])

    def sort_key(self) -> tuple[str, ...]:
        return tuple(reversed(self.labels))


def canonicalize(name: Union[str, DomainName]) -> DomainName:
    """Lowercase, fully-qualify and validate ``name``.

    >>> str(canonicalize("WWW.Stormfront.ORG"))
    'www.stormfront.org.'
    """
    if isinstance(name, DomainName):
        return name
    text = name.strip()
    if text in (".", ""):
        if text == "":
            raise InvalidName("empty name")
        return DomainName(())
    if text.endswith("."):
        text = text[:-1]
    return DomainName(tuple(text.split(".")))


@dataclass(frozen=True)
class AData:
    address: ipaddress.IPv4Address

    def __post_init__(self) -> None:
        object.__setattr__(self, "address", ipaddress.IPv4Address(self.address))

    def __str__(self) -> str:
        return str(self.address)


@dataclass(frozen=True)
class MXData:
    preference: int
    exchange: DomainName

    def __post_init__(self) -> None:
        if not 0 <= self.preference <= 0xFFFF:
            raise DnsError(f"MX preference out of range: {self.preference}")
        object.__setattr__(self, "exchange", canonicalize(self.exchange))

    def __str__(self) -> str:
        return f"{self.preference} {self.exchange}"


@dataclass(frozen=True)
class NSData:
    target: DomainName

    def __post_init__(self) -> None:
        object.__setattr__(self, "target", canonicalize(self.target))

    def __str__(self) -> str:
        return str(self.target)


@dataclass(frozen=True)
class CNAMEData:
    target: DomainName

    def __post_init__(self) -> None:
        object.__setattr__(self, "target", canonicalize(self.target))

    def __str__(self) -> str:
        return str(self.target)


@dataclass(frozen=True)
class SOAData:
    mname: DomainName
    rname: DomainName
    serial: int
    refresh: int
    retry: int
    expire: int
    minimum: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "mname", canonicalize(self.mname))
        object.__setattr__(self, "rname", canonicalize(self.rname))
        for f in ("serial", "refresh", "retry", "expire", "minimum"):
            if not 0 <= getattr(self, f) <= 0xFFFFFFFF:
                raise DnsError(f"SOA {f} out of range")

    def __str__(self) -> str:
        return (f"{self.mname} {self.rname} {self.serial} {self.refresh} "
                f"{self.retry} {self.expire} {self.minimum}")


RData = Union[AData, MXData, NSData, CNAMEData, SOAData]

DATA_TYPES: dict[RecordType, type] = {
    RecordType.A: AData,
    RecordType.MX: MXData,
    RecordType.NS: NSData,
    RecordType.CNAME: CNAMEData,
    RecordType.SOA: SOAData,
}


@dataclass(frozen=True)
class ResourceRecord:
    name: DomainName
    rtype: RecordType
    ttl: int
    data: RData

    def __post_init__(self) -> None:
        object.__setattr__(self, "name", canonicalize(self.name))
        object.__setattr__(self, "rtype", RecordType(self.rtype))
        expected = DATA_TYPES.get(self.rtype)
        if expected is None:
            raise DnsError(f"{self.rtype.name} is not a record type")
        if not isinstance(self.data, expected):
            raise DnsError(f"{self.rtype.name} record carries {type(self.data).__name__}")
        if not 0 <= self.ttl <= 0xFFFFFFFF:
            raise DnsError(f"TTL out of range: {self.ttl}")

    def __str__(self) -> str:
        return f"{self.name}\t{self.ttl}\tIN\t{self.rtype.name}\t{self.data}"

    def with_ttl(self, ttl: int) -> "ResourceRecord":
        return dataclasses.replace(self, ttl=ttl)


def parse_rdata(rtype: RecordType, fields: list[str]) -> RData:
    """Build record data from zone-text fields (``data...`` after the type)."""
    try:
        if rtype is RecordType.A:
            (addr,) = fields
            return AData(ipaddress.IPv4Address(addr))
        if rtype is RecordType.MX:
            pref, exchange = fields
            return MXData(int(pref), canonicalize(exchange))
        if rtype is RecordType.NS:
            (target,) = fields
            return NSData(canonicalize(target))
        if rtype is RecordType.CNAME:
            (target,) = fields
            return CNAMEData(canonicalize(target))
        if rtype is RecordType.SOA:
            mname, rname, *nums = fields
            if len(nums) != 5:
                raise ValueError("SOA needs five integers")
            return SOAData(canonicalize(mname), canonicalize(rname), *map(int, nums))
    except DnsError:
        raise
    except ValueError as exc:
        raise DnsError(f"bad {rtype.name} data {' '.join(fields)!r}: {exc}") from None
    raise DnsError(f"{rtype.name} has no record data")


@dataclass(frozen=True)
class DnsHeader:
    id: int = 0
    qr: bool = False
    opcode: Opcode = Opcode.QUERY
    aa: bool = False
    tc: bool = False
    rd: bool = True
    ra: bool = False
    rcode: Rcode = Rcode.NOERROR
    # counts are normalised by DnsMessage to the records actually carried
    ancount: int = 0
    nscount: int = 0
    arcount: int = 0

    def __post_init__(self) -> None:
        if not 0 <= self.id <= 0xFFFF:
            raise DnsError(f"message id out of range: {self.id}")
        object.__setattr__(self, "opcode", Opcode(self.opcode))
        object.__setattr__(self, "rcode", Rcode(self.rcode))

    @property
    def status(self) -> Rcode:
        """dig's display name for the rcode field."""
        return self.rcode


@dataclass(frozen=True)
class Question:
    name: DomainName
    rtype: RecordType

    def __post_init__(self) -> None:
        object.__setattr__(self, "name", canonicalize(self.name))
        object.__setattr__(self, "rtype", RecordType(self.rtype))

    def __str__(self) -> str:
        return f"{self.name} {self.rtype.name}"


@dataclass(frozen=True)
class DnsMessage:
    header: DnsHeader
    question: Question
    answers: tuple[ResourceRecord, ...] = ()
    authority: tuple[ResourceRecord, ...] = ()
    additional: tuple[ResourceRecord, ...] = field(default=())

    def __post_init__(self) -> None:
        for section in ("answers", "authority", "additional"):
            object.__setattr__(self, section, tuple(getattr(self, section)))
        counts = (len(self.answers), len(self.authority), len(self.additional))
        if (self.header.ancount, self.header.nscount, self.header.arcount) != counts:
            object.__setattr__(self, "header", dataclasses.replace(
                self.header, ancount=counts[0], nscount=counts[1], arcount=counts[2]))

    @property
    def rcode(self) -> Rcode:
        return self.header.rcode

    def reply(self, rcode: Rcode = Rcode.NOERROR, answers: Iterable[ResourceRecord] = (),
              aa: bool = False, ra: bool = True) -> "DnsMessage":
        """A response to this query carrying ``answers``."""
        header = dataclasses.replace(self.header, qr=True, aa=aa, ra=ra, rcode=rcode)
        return DnsMessage(header, self.question, tuple(answers))

    def to_text(self) -> str:
        """dig-like rendering, used for transcripts and human inspection."""
        h = self.header
        flags = " ".join(f for f in ("qr", "aa", "tc", "rd", "ra") if getattr(h, f))
        lines = [
            f";; ->>HEADER<<- opcode: {h.opcode.name}, status: {h.rcode.name}, id: {h.id}",
            f";; flags: {flags}; QUERY: 1, ANSWER: {h.ancount}, AUTHORITY: {h.nscount}, "
            f"ADDITIONAL: {h.arcount}",
            ";; QUESTION SECTION:",
            f";{self.question.name}\t\tIN\t{self.question.rtype.name}",
        ]
        for title, records in (("ANSWER", self.answers), ("AUTHORITY", self.authority),
                               ("ADDITIONAL", self.additional)):
            if records:
                lines.append(f";; {title} SECTION:")
                lines.extend(str(r) for r in records)
        return "\n".join(lines)


def make_query(name: Union[str, DomainName], rtype: RecordType, id: int = 0,
               rd: bool = True) -> DnsMessage:
    return DnsMessage(DnsHeader(id=id, rd=rd), Question(canonicalize(name), rtype))

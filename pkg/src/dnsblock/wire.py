"""RFC 1035 wire codec for the message subset in :mod:`dnsblock.model`.

Encoding emits uncompressed names unless ``compress=True``; decoding always
accepts compression pointers.
"""

from __future__ import annotations

import ipaddress
import struct

from .model import (
    AData,
    CNAMEData,
    DnsError,
    DnsHeader,
    DnsMessage,
    DomainName,
    InvalidName,
    MXData,
    NSData,
    Opcode,
    Question,
    Rcode,
    RecordType,
    ResourceRecord,
    SOAData,
)

CLASS_IN = 1
HEADER = struct.Struct("!HHHHHH")


class EncodeError(DnsError):
    pass


class DecodeError(DnsError):
    def __init__(self, reason: str, offset: int):
        super().__init__(f"{reason} at offset {offset}")
        self.reason = reason
        self.offset = offset


class _Writer:
    def __init__(self, compress: bool):
        self.buf = bytearray()
        self.compress = compress
        self.offsets: dict[tuple[str, ...], int] = {}

    def name(self, name: DomainName) -> None:
        labels = name.labels
        for i in range(len(labels)):
            suffix = labels[i:]
            if self.compress and suffix in self.offsets:
                self.buf += struct.pack("!H", 0xC000 | self.offsets[suffix])
                return
            if self.compress and len(self.buf) < 0x4000:
                self.offsets[suffix] = len(self.buf)
            raw = labels[i].encode("ascii")
            if len(raw) > 63:
                raise EncodeError(f"label longer than 63 octets in {name}")
            self.buf.append(len(raw))
            self.buf += raw
        self.buf.append(0)

    def record(self, rr: ResourceRecord) -> None:
        self.name(rr.name)
        self.buf += struct.pack("!HHI", rr.rtype, CLASS_IN, rr.ttl)
        length_at = len(self.buf)
        self.buf += b"\0\0"
        data = rr.data
        if isinstance(data, AData):
            self.buf += data.address.packed
        elif isinstance(data, MXData):
            self.buf += struct.pack("!H", data.preference)
            self.name(data.exchange)
        elif isinstance(data, (NSData, CNAMEData)):
            self.name(data.target)
        elif isinstance(data, SOAData):
            self.name(data.mname)
            self.name(data.rname)
            self.buf += struct.pack("!IIIII", data.serial, data.refresh, data.retry,
                                    data.expire, data.minimum)
        else:  # pragma: no cover - ResourceRecord validates data
            raise EncodeError(f"cannot encode {type(data).__name__}")
        rdlength = len(self.buf) - length_at - 2
        struct.pack_into("!H", self.buf, length_at, rdlength)


def _flags(h: DnsHeader) -> int:
    return ((h.qr << 15) | (h.opcode << 11) | (h.aa << 10) | (h.tc << 9)
            | (h.rd << 8) | (h.ra << 7) | h.rcode)


def encode(message: DnsMessage, compress: bool = False) -> bytes:
    """Serialise ``message``; deterministic for a given message."""
    w = _Writer(compress)
    h = message.header
    w.buf += HEADER.pack(h.id, _flags(h), 1, len(message.answers),
                         len(message.authority), len(message.additional))
    w.name(message.question.name)
    w.buf += struct.pack("!HH", message.question.rtype, CLASS_IN)
    for section in (message.answers, message.authority, message.additional):
        for rr in section:
            w.record(rr)
    return bytes(w.buf)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise DecodeError("truncated", self.pos)
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: struct.Struct):
        return fmt.unpack(self.take(fmt.size))

    def name(self) -> DomainName:
        labels: list[str] = []
        pos = self.pos
        end = None  # where reading continues after the first pointer
        seen: set[int] = set()
        data = self.data
        while True:
            if pos >= len(data):
                raise DecodeError("truncated", pos)
            length = data[pos]
            if length & 0xC0 == 0xC0:
                if pos + 1 >= len(data):
                    raise DecodeError("truncated", pos)
                if pos in seen:
                    raise DecodeError("compression loop", pos)
                seen.add(pos)
                if end is None:
                    end = pos + 2
                pos = ((length & 0x3F) << 8) | data[pos + 1]
                continue
            if length & 0xC0:
                raise DecodeError("bad label type", pos)
            if length == 0:
                pos += 1
                break
            if pos + 1 + length > len(data):
                raise DecodeError("truncated", pos)
            raw = data[pos + 1:pos + 1 + length]
            try:
                labels.append(raw.decode("ascii"))
            except UnicodeDecodeError:
                raise DecodeError("non-ascii label", pos) from None
            pos += 1 + length
        self.pos = end if end is not None else pos
        try:
            return DomainName(tuple(labels))
        except InvalidName as exc:
            raise DecodeError(f"bad name ({exc})", self.pos) from None

    def record(self) -> ResourceRecord:
        name = self.name()
        type_at = self.pos
        rtype_code, rclass, ttl, rdlength = self.unpack(struct.Struct("!HHIH"))
        if rclass != CLASS_IN:
            raise DecodeError(f"unsupported class {rclass}", type_at)
        try:
            rtype = RecordType(rtype_code)
        except ValueError:
            raise DecodeError(f"unknown rtype {rtype_code}", type_at) from None
        rdata_at = self.pos
        rdata_end = rdata_at + rdlength
        if rdata_end > len(self.data):
            raise DecodeError("truncated", rdata_at)
        if rtype is RecordType.A:
            if rdlength != 4:
                raise DecodeError("A rdata length != 4", rdata_at)
            data = AData(ipaddress.IPv4Address(self.take(4)))
        elif rtype is RecordType.MX:
            (pref,) = self.unpack(struct.Struct("!H"))
            data = MXData(pref, self.name())
        elif rtype is RecordType.NS:
            data = NSData(self.name())
        elif rtype is RecordType.CNAME:
            data = CNAMEData(self.name())
        elif rtype is RecordType.SOA:
            mname = self.name()
            rname = self.name()
            nums = self.unpack(struct.Struct("!IIIII"))
            data = SOAData(mname, rname, *nums)
        else:
            raise DecodeError(f"{rtype.name} is not a record type", type_at)
        if self.pos != rdata_end:
            raise DecodeError("rdata length mismatch", rdata_at)
        return ResourceRecord(name, rtype, ttl, data)


def decode(data: bytes) -> DnsMessage:
    """Parse wire bytes; raises :class:`DecodeError` naming the failing offset."""
    r = _Reader(bytes(data))
    ident, flags, qdcount, ancount, nscount, arcount = r.unpack(HEADER)
    opcode_value = (flags >> 11) & 0xF
    rcode_value = flags & 0xF
    try:
        opcode = Opcode(opcode_value)
    except ValueError:
        raise DecodeError(f"unknown opcode {opcode_value}", 2) from None
    try:
        rcode = Rcode(rcode_value)
    except ValueError:
        raise DecodeError(f"unknown rcode {rcode_value}", 3) from None
    if qdcount != 1:
        raise DecodeError(f"expected one question, got {qdcount}", 4)
    qname = r.name()
    qtype_at = r.pos
    qtype_code, qclass = r.unpack(struct.Struct("!HH"))
    if qclass != CLASS_IN:
        raise DecodeError(f"unsupported class {qclass}", qtype_at)
    try:
        qtype = RecordType(qtype_code)
    except ValueError:
        raise DecodeError(f"unknown rtype {qtype_code}", qtype_at) from None
    sections = []
    for count in (ancount, nscount, arcount):
        sections.append(tuple(r.record() for _ in range(count)))
    if r.pos != len(r.data):
        raise DecodeError("trailing data", r.pos)
    header = DnsHeader(
        id=ident,
        qr=bool(flags & 0x8000),
        opcode=opcode,
        aa=bool(flags & 0x0400),
        tc=bool(flags & 0x0200),
        rd=bool(flags & 0x0100),
        ra=bool(flags & 0x0080),
        rcode=rcode,
    )
    return DnsMessage(header, Question(qname, qtype), *sections)

import ipaddress
import random
import struct

import dns.flags
import dns.message
import dns.rcode
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dnsblock import wire
from dnsblock.model import (
    AData,
    CNAMEData,
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
    canonicalize,
    make_query,
)


def test_query_round_trip():
    q = make_query("example.com.", RecordType.A, id=1)
    assert wire.decode(wire.encode(q)) == q


def test_nxdomain_header_bytes_by_hand():
    reply = make_query("example.com.", RecordType.A, id=0x1234).reply(Rcode.NXDOMAIN)
    raw = wire.encode(reply)
    # RFC 1035 4.1.1: ID, flags, QDCOUNT, ANCOUNT, NSCOUNT, ARCOUNT
    ident, flags, qd, an, ns, ar = struct.unpack("!6H", raw[:12])
    assert ident == 0x1234
    assert flags & 0x000F == 3
    assert flags >> 15 == 1
    assert (qd, an, ns, ar) == (1, 0, 0, 0)
    # flags: QR, RD, RA set, rcode 3
    assert raw[2:4] == bytes([0x81, 0x83])


def test_nxdomain_header_with_reference_decoder():
    reply = make_query("example.com.", RecordType.A, id=77).reply(Rcode.NXDOMAIN)
    ref = dns.message.from_wire(wire.encode(reply))
    assert ref.rcode() == dns.rcode.NXDOMAIN
    assert ref.id == 77
    assert len(ref.answer) == 0
    assert ref.flags & dns.flags.QR


def test_reference_decoder_agrees_on_full_reply():
    name = canonicalize("stormfront.org")
    answers = [
        ResourceRecord(name, RecordType.A, 3600, AData(ipaddress.IPv4Address("198.51.100.10"))),
        ResourceRecord(name, RecordType.MX, 300, MXData(10, canonicalize("mail.stormfront.org"))),
        ResourceRecord(name, RecordType.SOA, 86400, SOAData(
            canonicalize("ns1.stormfront.org"), canonicalize("hostmaster.stormfront.org"),
            2003050101, 10800, 3600, 604800, 86400)),
    ]
    msg = make_query(name, RecordType.ANY, id=9).reply(Rcode.NOERROR, answers, aa=True)
    ref = dns.message.from_wire(wire.encode(msg))
    assert ref.flags & dns.flags.AA
    texts = sorted(rr.to_text() for rrset in ref.answer for rr in rrset)
    assert texts == sorted(["198.51.100.10", "10 mail.stormfront.org.",
                            "ns1.stormfront.org. hostmaster.stormfront.org. 2003050101 10800 "
                            "3600 604800 86400"])


def test_decodes_what_the_reference_encoder_compresses():
    q = dns.message.make_query("www.stormfront.org", "MX")
    r = dns.message.make_response(q)
    r.answer.append(dns.rrset.from_text("www.stormfront.org.", 60, "IN", "MX",
                                        "10 mail.www.stormfront.org."))
    raw = r.to_wire()
    msg = wire.decode(raw)
    assert msg.answers[0].data.exchange == canonicalize("mail.www.stormfront.org")
    assert len(raw) < len(wire.encode(msg))  # the reference output used pointers


def test_compressed_encoding_round_trips():
    name = canonicalize("www.stormfront.org")
    answers = [ResourceRecord(name, RecordType.CNAME, 60, CNAMEData(canonicalize("stormfront.org"))),
               ResourceRecord(canonicalize("stormfront.org"), RecordType.NS, 60,
                              NSData(canonicalize("ns1.stormfront.org")))]
    msg = make_query(name, RecordType.A).reply(Rcode.NOERROR, answers)
    packed = wire.encode(msg, compress=True)
    assert len(packed) < len(wire.encode(msg))
    assert wire.decode(packed) == msg


def test_long_label_rejected():
    with pytest.raises(InvalidName):
        make_query("a" * 64 + ".com", RecordType.A)


def test_encoder_checks_label_length_too():
    bad = object.__new__(DomainName)
    object.__setattr__(bad, "labels", ("a" * 64, "com"))
    q = make_query("ok.com", RecordType.A)
    msg = DnsMessage(q.header, Question.__new__(Question))
    object.__setattr__(msg.question, "name", bad)
    object.__setattr__(msg.question, "rtype", RecordType.A)
    with pytest.raises(wire.EncodeError):
        wire.encode(msg)


def test_empty_buffer_truncated():
    with pytest.raises(wire.DecodeError) as err:
        wire.decode(b"")
    assert err.value.reason == "truncated"
    assert err.value.offset == 0


def test_self_pointer_is_a_loop():
    header = struct.pack("!6H", 1, 0, 1, 0, 0, 0)
    raw = header + b"\xc0\x0c" + struct.pack("!HH", 1, 1)
    with pytest.raises(wire.DecodeError) as err:
        wire.decode(raw)
    assert err.value.reason == "compression loop"
    assert err.value.offset == 12


def test_unknown_rcode_opcode_rtype():
    base = bytearray(wire.encode(make_query("a.org", RecordType.A)))
    bad_rcode = bytearray(base)
    bad_rcode[3] |= 0x06
    with pytest.raises(wire.DecodeError, match="rcode"):
        wire.decode(bytes(bad_rcode))
    bad_opcode = bytearray(base)
    bad_opcode[2] |= 0x10
    with pytest.raises(wire.DecodeError, match="opcode"):
        wire.decode(bytes(bad_opcode))
    bad_type = bytearray(base)
    bad_type[-3] = 28  # AAAA
    with pytest.raises(wire.DecodeError, match="rtype") as err:
        wire.decode(bytes(bad_type))
    assert err.value.offset == len(base) - 4


def test_trailing_bytes_rejected():
    raw = wire.encode(make_query("a.org", RecordType.A)) + b"\0"
    with pytest.raises(wire.DecodeError, match="trailing"):
        wire.decode(raw)


def test_truncated_rdata():
    msg = make_query("a.org", RecordType.A).reply(Rcode.NOERROR, [
        ResourceRecord(canonicalize("a.org"), RecordType.A, 1, AData(ipaddress.IPv4Address("192.0.2.1")))])
    raw = wire.encode(msg)
    for cut in range(len(raw)):
        with pytest.raises(wire.DecodeError):
            wire.decode(raw[:cut])


# ---- generators shared with the acceptance suite ---------------------------

LABEL = st.text(alphabet="abcdefghijklmnopqrstuvwxyz0123456789-", min_size=1, max_size=12)
NAMES = st.lists(LABEL, min_size=0, max_size=4).map(lambda ls: DomainName(tuple(ls)))
ADDRS = st.integers(0, 2**32 - 1).map(ipaddress.IPv4Address)
U32 = st.integers(0, 2**32 - 1)


def _records():
    def build(rtype, name, ttl, a, b, c, nums):
        data = {
            RecordType.A: lambda: AData(a),
            RecordType.MX: lambda: MXData(nums[0] & 0xFFFF, b),
            RecordType.NS: lambda: NSData(b),
            RecordType.CNAME: lambda: CNAMEData(c),
            RecordType.SOA: lambda: SOAData(b, c, *nums),
        }[rtype]()
        return ResourceRecord(name, rtype, ttl, data)

    return st.builds(build, st.sampled_from([t for t in RecordType if t is not RecordType.ANY]),
                     NAMES, U32, ADDRS, NAMES, NAMES, st.tuples(U32, U32, U32, U32, U32))


MESSAGES = st.builds(
    lambda h, q, an, ns, ar: DnsMessage(h, q, tuple(an), tuple(ns), tuple(ar)),
    st.builds(DnsHeader, id=st.integers(0, 0xFFFF), qr=st.booleans(),
              opcode=st.just(Opcode.QUERY), aa=st.booleans(), tc=st.booleans(),
              rd=st.booleans(), ra=st.booleans(), rcode=st.sampled_from(list(Rcode))),
    st.builds(Question, NAMES, st.sampled_from(list(RecordType))),
    st.lists(_records(), max_size=4), st.lists(_records(), max_size=2),
    st.lists(_records(), max_size=2),
)


@settings(max_examples=300, deadline=None)
@given(MESSAGES, st.booleans())
def test_round_trip_property(msg, compress):
    assert wire.decode(wire.encode(msg, compress=compress)) == msg


@settings(max_examples=300, deadline=None)
@given(st.binary(max_size=80))
def test_decode_never_crashes(raw):
    try:
        wire.decode(raw)
    except wire.DecodeError:
        pass


def test_bit_flips_only_raise_decode_errors():
    rng = random.Random(3)
    raw = wire.encode(make_query("www.stormfront.org", RecordType.MX, id=5).reply(
        Rcode.NOERROR, [ResourceRecord(canonicalize("www.stormfront.org"), RecordType.MX, 5,
                                       MXData(10, canonicalize("mail.stormfront.org")))]))
    for _ in range(2000):
        buf = bytearray(raw)
        for _ in range(rng.randint(1, 3)):
            buf[rng.randrange(len(buf))] ^= 1 << rng.randrange(8)
        try:
            wire.decode(bytes(buf))
        except wire.DecodeError:
            pass

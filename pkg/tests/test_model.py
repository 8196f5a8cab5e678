import ipaddress

import pytest

from dnsblock.model import (
    AData,
    DnsHeader,
    DnsMessage,
    DomainName,
    InvalidName,
    MXData,
    NSData,
    Question,
    Rcode,
    RecordType,
    ResourceRecord,
    canonicalize,
    make_query,
    parse_rdata,
)


def test_canonicalize_folds_case():
    assert str(canonicalize("WWW.Stormfront.ORG")) == "www.stormfront.org."


def test_canonicalize_idempotent():
    once = canonicalize("stormfront.org.")
    assert canonicalize(once) == once
    assert canonicalize(str(once)) == once
    assert str(once) == "stormfront.org."


@pytest.mark.parametrize("bad", ["a..b", "", ".a", "a" * 64 + ".org", "badé.org"])
def test_canonicalize_rejects(bad):
    with pytest.raises(InvalidName):
        canonicalize(bad)


def test_name_length_limit():
    label = "a" * 63
    ok = ".".join([label] * 3) + "." + "b" * 61  # 64*3 + 62 + root = 255 octets
    assert len(canonicalize(ok).labels) == 4
    with pytest.raises(InvalidName):
        canonicalize(ok + "b")


def test_root_name():
    root = canonicalize(".")
    assert root.is_root and str(root) == "."
    assert canonicalize("org").parent() == root


def test_subdomain_relation():
    www = canonicalize("www.stormfront.org")
    apex = canonicalize("stormfront.org")
    assert www.is_subdomain_of(apex)
    assert www.is_subdomain_of(www)
    assert not apex.is_subdomain_of(www)
    assert not canonicalize("notstormfront.org").is_subdomain_of(apex)


def test_subdomain_partial_order():
    names = [canonicalize(n) for n in (".", "org", "stormfront.org", "www.stormfront.org",
                                        "kids.stormfront.org", "rotten.com", "com")]
    for a in names:
        assert a.is_subdomain_of(a)
        for b in names:
            if a.is_subdomain_of(b) and b.is_subdomain_of(a):
                assert a == b
            for c in names:
                if a.is_subdomain_of(b) and b.is_subdomain_of(c):
                    assert a.is_subdomain_of(c)


def test_record_data_must_match_type():
    name = canonicalize("x.org")
    with pytest.raises(Exception):
        ResourceRecord(name, RecordType.MX, 60, AData(ipaddress.IPv4Address("192.0.2.1")))
    with pytest.raises(Exception):
        ResourceRecord(name, RecordType.A, -1, AData(ipaddress.IPv4Address("192.0.2.1")))


def test_mx_points_to_a_name():
    data = parse_rdata(RecordType.MX, ["10", "mail.example.org."])
    assert isinstance(data.exchange, DomainName)


def test_header_counts_follow_sections():
    q = make_query("example.com", RecordType.A, id=1)
    rr = ResourceRecord(canonicalize("example.com"), RecordType.A, 60,
                        AData(ipaddress.IPv4Address("192.0.2.1")))
    reply = q.reply(Rcode.NOERROR, [rr, rr])
    assert reply.header.ancount == 2
    assert reply.header.qr and not reply.header.aa
    assert reply.header.status is Rcode.NOERROR


def test_to_text_looks_like_dig():
    msg = make_query("example.com", RecordType.NS).reply(
        Rcode.NOERROR, [ResourceRecord(canonicalize("example.com"), RecordType.NS, 60,
                                       NSData(canonicalize("ns.example.com")))])
    text = msg.to_text()
    assert "status: NOERROR" in text
    assert "example.com.\t60\tIN\tNS\tns.example.com." in text


def test_message_equality_by_value():
    a = DnsMessage(DnsHeader(id=5), Question(canonicalize("a.org"), RecordType.MX))
    b = DnsMessage(DnsHeader(id=5), Question(canonicalize("A.ORG"), RecordType.MX))
    assert a == b


def test_mx_data_str():
    assert str(MXData(10, canonicalize("mail.x.org"))) == "10 mail.x.org."

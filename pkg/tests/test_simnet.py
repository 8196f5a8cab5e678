import ipaddress
import random
import socket

import pytest

from dnsblock import wire
from dnsblock.model import Rcode, RecordType, canonicalize
from dnsblock.simnet import (
    AuthoritativeTree,
    QueryTimeout,
    RecursiveResolver,
    StubClient,
    Transport,
    UdpFleetServer,
    UdpNetwork,
    VirtualNetwork,
    stub_query,
)
from dnsblock.tamper import load_policy_file
from dnsblock.zonefile import parse_zone_text

QTYPES = [RecordType.A, RecordType.ANY, RecordType.MX, RecordType.NS, RecordType.SOA,
          RecordType.CNAME]


def _probe_names(tree):
    names = set(tree.names())
    for n in list(names):
        names.add(n.child("nonexistent"))
    return sorted(names, key=lambda n: n.sort_key())


def test_pass_through_matches_authoritative(tree):
    plain = RecursiveResolver("plain", tree)
    for name in _probe_names(tree):
        for qtype in QTYPES:
            got = plain.resolve((name, qtype), id=1)
            want = tree.answer((name, qtype), id=1)
            assert (got.rcode, got.answers) == (want.rcode, want.answers), (name, qtype)


def test_authoritative_nxdomain_and_nodata(tree):
    assert tree.answer((canonicalize("nope.stormfront.org"), RecordType.A)).rcode is Rcode.NXDOMAIN
    nodata = tree.answer((canonicalize("kids.stormfront.org"), RecordType.SOA))
    assert nodata.rcode is Rcode.NOERROR and not nodata.answers


def test_cname_chain_is_followed():
    tree = AuthoritativeTree(parse_zone_text("""
        . 60 SOA a. b. 1 1 1 1 1
        . 60 NS ns.root.
        org. 60 NS ns.org.
        org. 60 SOA ns.org. h.org. 1 1 1 1 1
        a.org. 60 CNAME b.org.
        b.org. 60 A 192.0.2.7
    """))
    reply = RecursiveResolver("r", tree).resolve((canonicalize("a.org"), RecordType.A))
    assert [r.rtype for r in reply.answers] == [RecordType.CNAME, RecordType.A]


def test_lame_delegation_is_servfail():
    tree = AuthoritativeTree(parse_zone_text("""
        . 60 SOA a. b. 1 1 1 1 1
        org. 60 NS ns.org.
    """))
    reply = RecursiveResolver("r", tree).resolve((canonicalize("x.org"), RecordType.A))
    assert reply.rcode is Rcode.SERVFAIL


def test_silence_times_out_after_exactly_timeout(tree):
    silent = RecursiveResolver("s", tree, load_policy_file("zone stormfront.org silence", tree),
                               address="10.0.0.1")
    transport = Transport(latency=0.01, timeout=1.5)
    client = StubClient(VirtualNetwork([silent], transport))
    ex = client.exchange("10.0.0.1", (canonicalize("www.stormfront.org"), RecordType.A))
    assert ex.timed_out and ex.rtt == 1.5
    with pytest.raises(QueryTimeout) as err:
        stub_query(client, "10.0.0.1", (canonicalize("stormfront.org"), RecordType.MX))
    assert err.value.after == 1.5
    # names outside the silenced zone still answer
    ok = stub_query(client, "10.0.0.1", (canonicalize("rotten.com"), RecordType.A))
    assert ok.rcode is Rcode.NOERROR


def test_total_loss_always_times_out(tree):
    r = RecursiveResolver("r", tree, address="10.0.0.2")
    client = StubClient(VirtualNetwork([r], Transport(loss_probability=1.0, timeout=0.5)))
    for i in range(20):
        assert client.exchange("10.0.0.2", (canonicalize("rotten.com"), RecordType.A),
                               random.Random(i)).timed_out


def test_bad_loss_probability():
    with pytest.raises(ValueError):
        Transport(loss_probability=1.5)


def test_exchange_is_deterministic(tree):
    r = RecursiveResolver("r", tree, address="10.0.0.3")
    net = VirtualNetwork([r], Transport(loss_probability=0.3))
    q = (canonicalize("www.stormfront.org"), RecordType.MX)
    first = [StubClient(net, seed=7).exchange("10.0.0.3", q, random.Random(i)) for i in range(30)]
    again = [StubClient(net, seed=7).exchange("10.0.0.3", q, random.Random(i)) for i in range(30)]
    assert first == again
    assert any(e.timed_out for e in first) and not all(e.timed_out for e in first)


def test_unknown_address_times_out(tree):
    client = StubClient(VirtualNetwork([], Transport(timeout=0.3)))
    assert client.exchange("10.9.9.9", (canonicalize("a.org"), RecordType.A)).timed_out


def test_malformed_and_response_packets_get_no_reply(tree):
    r = RecursiveResolver("r", tree)
    assert r.handle_wire(b"\x00\x01") is None
    reply = wire.encode(tree.answer((canonicalize("rotten.com"), RecordType.A)))
    assert r.handle_wire(reply) is None


def test_cache_honours_ttl(tree):
    r = RecursiveResolver("r", tree, cache=True)
    q = (canonicalize("rotten.com"), RecordType.A)
    first = r.resolve(q)
    ttl = min(a.ttl for a in first.answers)
    r.tree = tree.replace_records([rr for rr in tree.records()
                                   if not (rr.name == q[0] and rr.rtype is RecordType.A)])
    assert r.resolve(q).answers == first.answers
    r.clock.advance(ttl + 1)
    assert r.resolve(q).answers == ()


def _free_port():
    with socket.socket(socket.AF_INET, socket.SOCK_DGRAM) as sock:
        sock.bind(("127.0.0.1", 0))
        return sock.getsockname()[1]


def test_udp_round_trip(tree):
    r = RecursiveResolver("r", tree, load_policy_file("zone stormfront.org nxdomain", tree),
                          address="10.0.0.4")
    with UdpFleetServer([r], bind_base=_free_port()) as server:
        endpoint, served = server.endpoints[0]
        assert served is r
        client = StubClient(UdpNetwork(timeout=2.0))
        blocked = stub_query(client, endpoint, (canonicalize("www.stormfront.org"), RecordType.A))
        assert blocked.rcode is Rcode.NXDOMAIN
        open_ = stub_query(client, endpoint, (canonicalize("rotten.com"), RecordType.A))
        assert open_.answers[0].data.address == ipaddress.IPv4Address("198.51.100.20")

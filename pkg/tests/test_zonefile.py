import pytest

from dnsblock.model import RecordType
from dnsblock.zonefile import ZoneFileError, dump_zone_text, parse_zone_text


def test_parse_basic():
    recs = parse_zone_text("""
        # comment
        example.org. 300 A 192.0.2.1
        Example.ORG  300 MX 10 mail.example.org   # trailing comment
    """)
    assert [r.rtype for r in recs] == [RecordType.A, RecordType.MX]
    assert str(recs[1].name) == "example.org."


def test_round_trip_through_text():
    text = "a.org. 60 A 192.0.2.1\na.org. 60 NS ns.a.org.\n"
    recs = parse_zone_text(text)
    assert parse_zone_text(dump_zone_text(recs)) == recs


@pytest.mark.parametrize("line", ["a.org 60 A", "a.org x A 192.0.2.1", "a.org 60 ANY 1",
                                  "a.org 60 TXT hello", "a.org 60 A 300.1.1.1"])
def test_errors_carry_line_numbers(line):
    with pytest.raises(ZoneFileError) as err:
        parse_zone_text("ok.org 60 A 192.0.2.1\n" + line, "z.txt")
    assert err.value.line == 2
    assert "z.txt:2" in str(err.value)

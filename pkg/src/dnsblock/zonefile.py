"""Line-oriented zone text format.

One record per line::

    name  TTL  TYPE  data...

``#`` starts a comment; blank lines are ignored. Names may omit the
trailing dot. Zone apexes are the names that own an SOA record.
"""

from __future__ import annotations

from pathlib import Path
from typing import Iterable, Union

from .model import DnsError, RecordType, ResourceRecord, canonicalize, parse_rdata


class ZoneFileError(DnsError):
    def __init__(self, message: str, line: int, source: str = "<zone>"):
        super().__init__(f"{source}:{line}: {message}")
        self.line = line


def parse_zone_text(text: str, source: str = "<zone>") -> list[ResourceRecord]:
    records = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        fields = line.split()
        if len(fields) < 4:
            raise ZoneFileError("expected: name TTL TYPE data...", lineno, source)
        name, ttl, rtype, *data = fields
        try:
            rtype_ = RecordType.parse(rtype)
            if rtype_ is RecordType.ANY:
                raise DnsError("ANY is a query type, not a record type")
            records.append(ResourceRecord(canonicalize(name), rtype_, int(ttl),
                                          parse_rdata(rtype_, data)))
        except (DnsError, ValueError) as exc:
            raise ZoneFileError(str(exc), lineno, source) from None
    return records


def load_zone_file(path: Union[str, Path]) -> list[ResourceRecord]:
    path = Path(path)
    return parse_zone_text(path.read_text(encoding="utf-8"), str(path))


def dump_zone_text(records: Iterable[ResourceRecord]) -> str:
    lines = []
    for rr in records:
        lines.append(f"{rr.name} {rr.ttl} {rr.rtype.name} {rr.data}")
    return "\n".join(lines) + "\n"

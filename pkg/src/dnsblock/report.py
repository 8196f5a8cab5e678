"""Blocking-effectiveness, email side-effect and compliance reports.

Inputs are per-provider verdict maps from :mod:`dnsblock.probe`. Whether a
hijacked web request ends on a page explaining the blocking cannot be seen
in DNS, so it comes from block-page metadata keyed by redirect target.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Optional, Sequence, Union

from . import wire
from .model import AData, CNAMEData, DnsError, DomainName, MXData, RecordType, canonicalize
from .probe import ProviderReport, Verdict, VerdictClass

REPORT_SCHEMA = "dnsblock.report"
REPORT_VERSION = 1

WEB = "web"
MAIL = "mail"
SERVICES = (WEB, MAIL)


class ReportError(DnsError):
    pass


class WebOutcome(Enum):
    ACCESSIBLE = "Accessible"
    BLOCKED = "Blocked"
    OBSCURE_ERROR = "ObscureError"


class EmailOutcome(Enum):
    UNHARMED = "Unharmed"
    BROKEN = "Broken"


class PrivacyExposure(Enum):
    NONE = "None"
    OWN_HOST = "OwnHost"
    THIRD_PARTY = "ThirdParty"
    GOVERNMENT = "Government"


@dataclass(frozen=True)
class BlockPage:
    """What sits behind a redirect target (an address or a host name)."""

    target: str
    explains_blocking: bool
    sets_cookie: bool = False
    privacy_exposure: PrivacyExposure = PrivacyExposure.NONE


class BlockPages(dict):
    """target string -> BlockPage"""

    @classmethod
    def of(cls, pages: Iterable[BlockPage]) -> "BlockPages":
        out = cls()
        for page in pages:
            key = page.target.rstrip(".").lower()
            if key in out:
                raise ReportError(f"block page {page.target} listed twice")
            out[key] = page
        return out

    def match(self, verdict: Verdict) -> Optional[BlockPage]:
        """First known page among the reply's CNAME/MX targets and addresses."""
        for key in _answer_targets(verdict):
            page = self.get(key)
            if page is not None:
                return page
        return None


def _answer_targets(verdict: Verdict) -> list[str]:
    keys = []
    if verdict.raw:
        try:
            msg = wire.decode(bytes.fromhex(verdict.raw))
        except (ValueError, wire.DecodeError):
            msg = None
        if msg is not None:
            for rr in msg.answers:
                if isinstance(rr.data, CNAMEData):
                    keys.append(str(rr.data.target).rstrip("."))
                elif isinstance(rr.data, MXData):
                    keys.append(str(rr.data.exchange).rstrip("."))
            keys += [str(rr.data.address) for rr in msg.answers if isinstance(rr.data, AData)]
    if verdict.target:
        keys.append(verdict.target.rstrip(".").lower())
    return keys


def _verdict(report: ProviderReport, name: DomainName, rtype: RecordType) -> Verdict:
    try:
        return report.verdicts[(name, rtype)]
    except KeyError:
        raise ReportError(f"provider {report.provider}: no {rtype.name} verdict for {name}") from None


def web_outcome(report: ProviderReport, name: Union[str, DomainName],
                pages: Mapping[str, BlockPage] = BlockPages()) -> WebOutcome:
    verdict = _verdict(report, canonicalize(name), RecordType.A)
    if verdict.kind is VerdictClass.UNTAMPERED:
        return WebOutcome.ACCESSIBLE
    if verdict.kind is VerdictClass.HIJACK_SUSPECT:
        page = BlockPages.match(pages, verdict)
        if page is not None and page.explains_blocking:
            return WebOutcome.BLOCKED
    return WebOutcome.OBSCURE_ERROR


@dataclass(frozen=True)
class MailResult:
    outcome: EmailOutcome
    # mail is redirected to the provider's own (or a third party's) exchange
    privacy_critical: bool = False


def email_outcome(report: ProviderReport, domain: Union[str, DomainName],
                  pages: Mapping[str, BlockPage] = BlockPages()) -> MailResult:
    verdict = _verdict(report, canonicalize(domain), RecordType.MX)
    if verdict.kind is VerdictClass.UNTAMPERED:
        return MailResult(EmailOutcome.UNHARMED)
    privacy = False
    if verdict.kind is VerdictClass.HIJACK_SUSPECT:
        page = BlockPages.match(pages, verdict)
        privacy = page is not None and page.privacy_exposure is not PrivacyExposure.NONE
    return MailResult(EmailOutcome.BROKEN, privacy)


def percent(part: int, total: int) -> int:
    """round(100 * part / total), halves rounded up, exact integer arithmetic."""
    if total <= 0:
        raise ReportError("percentage of an empty population")
    return (200 * part + total) // (2 * total)


@dataclass(frozen=True)
class OutcomeCell:
    name: DomainName
    should_block: bool
    accessible: int
    blocked: int
    obscure_error: int

    @property
    def total(self) -> int:
        return self.accessible + self.blocked + self.obscure_error

    @property
    def wrong(self) -> int:
        return self.accessible if self.should_block else self.blocked + self.obscure_error

    @property
    def error_rate(self) -> int:
        return percent(self.wrong, self.total)


@dataclass(frozen=True)
class EmailCell:
    domain: DomainName
    unharmed: int
    broken: int
    should_block: bool = False
    privacy_critical: int = 0

    @property
    def address(self) -> str:
        return f"postmaster@{str(self.domain).rstrip('.')}"

    @property
    def total(self) -> int:
        return self.unharmed + self.broken

    @property
    def error_rate(self) -> int:
        wrong = self.unharmed if self.should_block else self.broken
        return percent(wrong, self.total)


def effectiveness_table(reports: Sequence[ProviderReport],
                        rows: Sequence[tuple[Union[str, DomainName], bool]],
                        pages: Mapping[str, BlockPage] = BlockPages()) -> list[OutcomeCell]:
    cells = []
    for name, should_block in rows:
        name = canonicalize(name)
        counts = {o: 0 for o in WebOutcome}
        for report in reports:
            counts[web_outcome(report, name, pages)] += 1
        cells.append(OutcomeCell(name, should_block, counts[WebOutcome.ACCESSIBLE],
                                 counts[WebOutcome.BLOCKED], counts[WebOutcome.OBSCURE_ERROR]))
    return cells


def email_table(reports: Sequence[ProviderReport], domains: Iterable[Union[str, DomainName]],
                pages: Mapping[str, BlockPage] = BlockPages()) -> list[EmailCell]:
    cells = []
    for domain in domains:
        domain = canonicalize(domain)
        results = [email_outcome(r, domain, pages) for r in reports]
        unharmed = sum(r.outcome is EmailOutcome.UNHARMED for r in results)
        cells.append(EmailCell(domain, unharmed, len(results) - unharmed,
                               privacy_critical=sum(r.privacy_critical for r in results)))
    return cells


# ---- compliance ------------------------------------------------------------

Item = tuple[DomainName, str]  # (name, service)


@dataclass(frozen=True)
class Interpretation:
    id: int
    caption: str
    required_blocked: frozenset
    required_open: frozenset

    def __post_init__(self) -> None:
        if self.required_blocked & self.required_open:
            raise ReportError(f"interpretation {self.id} both blocks and keeps open "
                              f"{sorted(map(str, self.required_blocked & self.required_open))}")


def interpretations(zone: Union[str, DomainName] = "stormfront.org") -> list[Interpretation]:
    """The six readings of a web blocking order for ``zone``.

    Readings 1-3 ask for web blocking and want every other (name, service)
    pair left working. Readings 4-6 order "all communication" blocked for
    some names; they only require web access to stay open on the names the
    order leaves out.
    """
    zone = canonicalize(zone)
    www, kids = zone.child("www"), zone.child("kids")
    names = (zone, www, kids)
    everything = frozenset((n, s) for n in names for s in SERVICES)

    def web_reading(i, caption, blocked_names):
        blocked = frozenset((n, WEB) for n in blocked_names)
        return Interpretation(i, caption, blocked, everything - blocked)

    def all_reading(i, caption, blocked_names):
        blocked = frozenset((n, s) for n in blocked_names for s in SERVICES)
        open_ = frozenset((n, WEB) for n in names if n not in blocked_names)
        return Interpretation(i, caption, blocked, open_)

    z = str(zone).rstrip(".")
    return [
        web_reading(1, f"block web access on www.{z}, leave other services untouched "
                       "where possible", [www]),
        web_reading(2, f"as 1, and also block {z}", [www, zone]),
        web_reading(3, f"as 1, for every name in the {z} domain", names),
        all_reading(4, f"block all communication to www.{z}", [www]),
        all_reading(5, f"block all communication to {z} and www.{z}", [www, zone]),
        all_reading(6, f"block all communication to any name in the {z} domain", names),
    ]


def reachable(report: ProviderReport, item: Item,
              pages: Mapping[str, BlockPage] = BlockPages()) -> bool:
    name, service = item
    if service == WEB:
        return web_outcome(report, name, pages) is WebOutcome.ACCESSIBLE
    if service == MAIL:
        return email_outcome(report, name, pages).outcome is EmailOutcome.UNHARMED
    raise ReportError(f"unknown service {service!r}")


@dataclass(frozen=True)
class ProviderCompliance:
    provider: str
    underprotective: bool
    overrestrictive: bool

    @property
    def complying(self) -> bool:
        return not (self.underprotective or self.overrestrictive)


@dataclass(frozen=True)
class ComplianceRow:
    interpretation: Interpretation
    providers: tuple[ProviderCompliance, ...]
    # required-open items no provider keeps reachable
    infeasible_open: tuple[Item, ...] = ()

    @property
    def underprotective(self) -> int:
        return sum(p.underprotective for p in self.providers)

    @property
    def overrestrictive(self) -> int:
        return sum(p.overrestrictive for p in self.providers)

    @property
    def complying(self) -> int:
        return sum(p.complying for p in self.providers)

    @property
    def correct(self) -> int:
        return percent(self.complying, len(self.providers))


@dataclass(frozen=True)
class ComplianceMatrix:
    rows: tuple[ComplianceRow, ...]

    def counts(self) -> list[tuple[int, int, int, int]]:
        return [(r.interpretation.id, r.underprotective, r.complying, r.overrestrictive)
                for r in self.rows]


def compliance(reports: Sequence[ProviderReport], interps: Sequence[Interpretation],
               pages: Mapping[str, BlockPage] = BlockPages()) -> ComplianceMatrix:
    # resolve every needed outcome once; coverage gaps raise here
    items = sorted({i for it in interps for i in it.required_blocked | it.required_open},
                   key=lambda i: (i[0].sort_key(), i[1]))
    reach = {(r.provider, i): reachable(r, i, pages) for r in reports for i in items}
    rows = []
    for interp in interps:
        flags = tuple(ProviderCompliance(
            r.provider,
            any(reach[(r.provider, i)] for i in interp.required_blocked),
            any(not reach[(r.provider, i)] for i in interp.required_open),
        ) for r in reports)
        infeasible = tuple(i for i in sorted(interp.required_open,
                                             key=lambda i: (i[0].sort_key(), i[1]))
                           if reports and not any(reach[(r.provider, i)] for r in reports))
        rows.append(ComplianceRow(interp, flags, infeasible))
    return ComplianceMatrix(tuple(rows))


# ---- rendering -------------------------------------------------------------

def _name(name: DomainName) -> str:
    return str(name).rstrip(".")


def _table(header: Sequence[str], rows: Sequence[Sequence[str]]) -> list[str]:
    widths = [max(len(str(x)) for x in col) for col in zip(header, *rows)]
    lines = []
    for row in (header, *rows):
        cells = [str(c).ljust(w) if i == 0 else str(c).rjust(w)
                 for i, (c, w) in enumerate(zip(row, widths))]
        lines.append("  ".join(cells).rstrip())
    return lines


@dataclass
class Tables:
    web: list[OutcomeCell] = field(default_factory=list)
    email: list[EmailCell] = field(default_factory=list)
    compliance: Optional[ComplianceMatrix] = None
    reports: list[ProviderReport] = field(default_factory=list)


def render_web(cells: Sequence[OutcomeCell]) -> str:
    rows = [(_name(c.name), "yes" if c.should_block else "no", c.accessible, c.blocked,
             c.obscure_error, f"{c.error_rate}%") for c in cells]
    lines = ["Web blocking effectiveness", ""]
    lines += _table(("name", "should be blocked", "accessible", "blocked", "obscure error",
                     "error rate"), rows)
    return "\n".join(lines) + "\n"


def render_email(cells: Sequence[EmailCell]) -> str:
    rows = [(c.address, "yes" if c.should_block else "no", c.unharmed, c.broken,
             f"{c.error_rate}%") for c in cells]
    lines = ["Email side effects", ""]
    lines += _table(("address", "should be blocked", "unharmed", "broken", "error rate"), rows)
    return "\n".join(lines) + "\n"


def render_compliance(matrix: ComplianceMatrix) -> str:
    rows = [(r.interpretation.id, r.underprotective, r.complying, r.overrestrictive,
             f"{r.correct}%") for r in matrix.rows]
    lines = ["Compliance per interpretation", ""]
    lines += _table(("", "underprotective", "complying", "overrestrictive", "correct"), rows)
    lines.append("")
    for r in matrix.rows:
        lines.append(f"{r.interpretation.id}. {r.interpretation.caption}")
    notes = [(r.interpretation.id, r.infeasible_open) for r in matrix.rows if r.infeasible_open]
    if notes:
        lines.append("")
        for i, items in notes:
            desc = ", ".join(f"{s} on {_name(n)}" for n, s in items)
            lines.append(f"note {i}: no provider keeps {desc} working")
    return "\n".join(lines) + "\n"


def render_text(tables: Tables) -> str:
    parts = []
    if tables.web:
        parts.append(render_web(tables.web))
    if tables.email:
        parts.append(render_email(tables.email))
    if tables.compliance is not None:
        parts.append(render_compliance(tables.compliance))
    return "\n".join(parts)


def to_json(tables: Tables, pages: Mapping[str, BlockPage] = BlockPages()) -> str:
    doc: dict = {"schema": REPORT_SCHEMA, "version": REPORT_VERSION}
    doc["web"] = [{"name": _name(c.name), "should_block": c.should_block,
                   "accessible": c.accessible, "blocked": c.blocked,
                   "obscure_error": c.obscure_error, "error_rate": c.error_rate}
                  for c in tables.web]
    doc["email"] = [{"address": c.address, "should_block": c.should_block,
                     "unharmed": c.unharmed, "broken": c.broken, "error_rate": c.error_rate,
                     "privacy_critical": c.privacy_critical} for c in tables.email]
    if tables.compliance is not None:
        doc["compliance"] = [{
            "interpretation": r.interpretation.id,
            "caption": r.interpretation.caption,
            "underprotective": r.underprotective,
            "complying": r.complying,
            "overrestrictive": r.overrestrictive,
            "correct": r.correct,
            "infeasible_open": [[_name(n), s] for n, s in r.infeasible_open],
            "providers": {p.provider: {"underprotective": p.underprotective,
                                       "overrestrictive": p.overrestrictive}
                          for p in r.providers},
        } for r in tables.compliance.rows]
    doc["providers"] = {}
    for rep in tables.reports:
        detail = {"category": rep.category.value, "resolvers": rep.resolvers, "verdicts": {}}
        for (name, rtype), v in sorted(rep.verdicts.items(),
                                       key=lambda kv: (kv[0][0].sort_key(), kv[0][1])):
            detail["verdicts"][f"{_name(name)} {rtype.name}"] = {
                "class": v.kind.value, "target": v.target}
        doc["providers"][rep.provider] = detail
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"

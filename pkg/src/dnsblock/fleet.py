"""Fleet specifications: providers, their resolvers and policy files.

A fleet spec is a YAML document (see ``fixtures/nrw27/fleet.yaml``). Each
provider names a policy file applied to all of its listed resolvers, and
may list extra resolvers that do not tamper at all.
"""

from __future__ import annotations

import ipaddress
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence, Union

import yaml

from .model import DnsError, DomainName, RecordType, canonicalize
from .probe import (
    ProbePlan,
    ProviderReport,
    ReferenceSet,
    SpecialAddresses,
    Target,
    aggregate,
    classify,
    run_probes,
)
from .report import (
    BlockPage,
    BlockPages,
    ComplianceMatrix,
    EmailCell,
    OutcomeCell,
    PrivacyExposure,
    compliance,
    effectiveness_table,
    email_table,
    interpretations,
)
from .simnet import AuthoritativeTree, RecursiveResolver, Transport, VirtualNetwork
from .tamper import TamperPolicy, load_policy_file
from .zonefile import load_zone_file

FLEET_SCHEMA = "dnsblock.fleet"
FLEET_VERSION = 1
PROVIDER_COUNT = 27


class FixtureError(DnsError):
    pass


class FleetMismatch(FixtureError):
    """The fleet builds but does not reproduce its expected tables."""


@dataclass(frozen=True)
class ProviderSpec:
    id: str
    name: str
    archetype: str
    policy: str
    resolvers: tuple[str, ...]
    untampered_resolvers: tuple[str, ...] = ()


@dataclass(frozen=True)
class Expected:
    web: tuple[tuple[str, bool, int, int, int], ...] = ()
    email: tuple[tuple[str, int, int], ...] = ()
    compliance: tuple[tuple[int, int, int, int], ...] = ()


@dataclass
class FleetSpec:
    root: Path
    zones: str
    providers: list[ProviderSpec]
    probe_zone: DomainName
    probe_names: list[DomainName]
    block_pages: BlockPages
    unannounced: tuple[str, ...] = ()
    expected: Expected = field(default_factory=Expected)
    provider_count: Optional[int] = PROVIDER_COUNT

    @classmethod
    def load(cls, path: Union[str, Path], provider_count: Optional[int] = PROVIDER_COUNT
             ) -> "FleetSpec":
        """Load ``path`` (a fleet.yaml or the directory holding one)."""
        path = Path(path)
        if path.is_dir():
            path = path / "fleet.yaml"
        try:
            doc = yaml.safe_load(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise FixtureError(f"{path}: fleet spec not found") from None
        except yaml.YAMLError as exc:
            raise FixtureError(f"{path}: {exc}") from None
        return cls.from_dict(doc, path.parent, provider_count)

    @classmethod
    def from_dict(cls, doc: dict, root: Path, provider_count: Optional[int] = PROVIDER_COUNT
                  ) -> "FleetSpec":
        if not isinstance(doc, dict):
            raise FixtureError("fleet spec must be a mapping")
        if doc.get("schema") != FLEET_SCHEMA or doc.get("version") != FLEET_VERSION:
            raise FixtureError(f"expected schema {FLEET_SCHEMA} v{FLEET_VERSION}, found "
                               f"{doc.get('schema')} v{doc.get('version')}")
        try:
            providers = [ProviderSpec(p["id"], p.get("name", p["id"]), p["archetype"],
                                      p["policy"], tuple(p["resolvers"]),
                                      tuple(p.get("untampered_resolvers", ())))
                         for p in doc["providers"]]
            pages = BlockPages.of(
                BlockPage(str(b["target"]), bool(b["explains_blocking"]),
                          bool(b.get("sets_cookie", False)),
                          PrivacyExposure(b.get("privacy_exposure", "None")))
                for b in doc.get("block_pages", ()))
            probe = doc["probe"]
            exp = doc.get("expected") or {}
            expected = Expected(tuple(tuple(r) for r in exp.get("web", ())),
                                tuple(tuple(r) for r in exp.get("email", ())),
                                tuple(tuple(r) for r in exp.get("compliance", ())))
            spec = cls(Path(root), doc["zones"], providers, canonicalize(probe["zone"]),
                       [canonicalize(n) for n in probe["names"]], pages,
                       tuple(doc.get("unannounced", ())), expected, provider_count)
        except (KeyError, TypeError, ValueError, DnsError) as exc:
            raise FixtureError(f"bad fleet spec: {exc!r}") from None
        spec.validate()
        return spec

    def validate(self) -> None:
        if self.provider_count is not None and len(self.providers) != self.provider_count:
            raise FixtureError(f"fleet has {len(self.providers)} providers, "
                               f"expected {self.provider_count}")
        ids = [p.id for p in self.providers]
        if len(set(ids)) != len(ids):
            raise FixtureError("duplicate provider ids")
        seen: set[str] = set()
        for p in self.providers:
            if not p.resolvers:
                raise FixtureError(f"provider {p.id} has no resolvers")
            for addr in (*p.resolvers, *p.untampered_resolvers):
                try:
                    ipaddress.IPv4Address(addr)
                except ValueError:
                    raise FixtureError(f"provider {p.id}: bad resolver address {addr!r}") from None
                if addr in seen:
                    raise FixtureError(f"resolver {addr} listed twice")
                seen.add(addr)
        for net in self.unannounced:
            ipaddress.IPv4Network(net)

    def special_addresses(self) -> SpecialAddresses:
        return SpecialAddresses(unannounced=self.unannounced)

    def provider_map(self) -> dict[str, str]:
        return {addr: p.id for p in self.providers
                for addr in (*p.resolvers, *p.untampered_resolvers)}

    def resolver_count(self) -> int:
        return len(self.provider_map())


@dataclass
class ResolverFleet:
    spec: FleetSpec
    tree: AuthoritativeTree
    resolvers: list[RecursiveResolver]

    @property
    def provider_map(self) -> dict[str, str]:
        return {r.address: r.provider for r in self.resolvers}

    def network(self, transport: Transport = Transport()) -> VirtualNetwork:
        return VirtualNetwork(self.resolvers, transport)

    def targets(self) -> list[Target]:
        return [Target(r.address, r.provider) for r in self.resolvers]

    def reference(self) -> ReferenceSet:
        return ReferenceSet.from_tree(self.tree, self.spec.probe_names)

    def survey(self, seed: int = 0, transport: Transport = Transport()) -> list[ProviderReport]:
        """Probe every resolver, classify and aggregate per provider."""
        plan = ProbePlan(self.targets(), list(self.spec.probe_names), seed=seed)
        probes = run_probes(plan, self.network(transport))
        ref = self.reference()
        special = self.spec.special_addresses()
        verdicts = [(p, classify(p, ref, special)) for p in probes]
        return aggregate(verdicts, self.provider_map, self.spec.probe_zone)


@dataclass
class FleetTables:
    web: list[OutcomeCell]
    email: list[EmailCell]
    compliance: ComplianceMatrix


def default_rows(spec: FleetSpec) -> list[tuple[DomainName, bool]]:
    """Rows of the web table; without expected rows, the apex and www are ordered blocked."""
    if spec.expected.web:
        return [(canonicalize(r[0]), bool(r[1])) for r in spec.expected.web]
    zone = spec.probe_zone
    return [(n, n in (zone, zone.child("www"))) for n in spec.probe_names]


def tables_for(spec: FleetSpec, reports: Sequence[ProviderReport]) -> FleetTables:
    rows = default_rows(spec)
    domains = ([canonicalize(r[0]) for r in spec.expected.email] if spec.expected.email
               else [n for n, _ in rows])
    return FleetTables(effectiveness_table(reports, rows, spec.block_pages),
                       email_table(reports, domains, spec.block_pages),
                       compliance(reports, interpretations(spec.probe_zone), spec.block_pages))


def check_expected(spec: FleetSpec, tables: FleetTables) -> list[str]:
    """Differences between computed tables and the fleet spec's expected counts."""
    problems = []
    exp = spec.expected
    for row, cell in zip(exp.web, tables.web):
        got = (cell.accessible, cell.blocked, cell.obscure_error)
        if tuple(row[2:]) != got:
            problems.append(f"web {row[0]}: expected {tuple(row[2:])}, got {got}")
    for row, cell in zip(exp.email, tables.email):
        got = (cell.unharmed, cell.broken)
        if tuple(row[1:]) != got:
            problems.append(f"email {row[0]}: expected {tuple(row[1:])}, got {got}")
    computed = {c[0]: c[1:] for c in tables.compliance.counts()}
    for row in exp.compliance:
        if computed.get(row[0]) != tuple(row[1:]):
            problems.append(f"compliance {row[0]}: expected {tuple(row[1:])}, "
                            f"got {computed.get(row[0])}")
    return problems


def build_fleet(spec: FleetSpec, tree: Optional[AuthoritativeTree] = None,
                check: bool = True) -> ResolverFleet:
    """One resolver per listed address, policies loaded against ``tree``.

    With ``check`` set and expected counts present in the fleet spec, the fleet is
    surveyed once and any mismatch raises :class:`FixtureError`.
    """
    if tree is None:
        zone_path = spec.root / spec.zones
        if not zone_path.exists():
            raise FixtureError(f"{zone_path}: zone file not found")
        tree = AuthoritativeTree(load_zone_file(zone_path))
    cache: dict[str, list[TamperPolicy]] = {}
    resolvers = []
    for p in spec.providers:
        if p.policy not in cache:
            path = spec.root / p.policy
            if not path.exists():
                raise FixtureError(f"{path}: policy file not found (provider {p.id})")
            cache[p.policy] = load_policy_file(path.read_text(encoding="utf-8"), tree, str(path))
        for addr in p.resolvers:
            resolvers.append(RecursiveResolver(f"{p.id}@{addr}", tree, cache[p.policy],
                                               provider=p.id, address=addr))
        for addr in p.untampered_resolvers:
            resolvers.append(RecursiveResolver(f"{p.id}@{addr}", tree, (),
                                               provider=p.id, address=addr))
    resolvers.sort(key=lambda r: ipaddress.IPv4Address(r.address))
    fleet = ResolverFleet(spec, tree, resolvers)
    if check and (spec.expected.web or spec.expected.email or spec.expected.compliance):
        problems = check_expected(spec, tables_for(spec, fleet.survey()))
        if problems:
            raise FleetMismatch("fleet does not reproduce its expected tables: "
                               + "; ".join(problems))
    return fleet


def bundled_fleet_path(name: str = "nrw27") -> Path:
    return Path(str(resources.files("dnsblock") / "fixtures" / name))


def load_bundled(check: bool = True) -> ResolverFleet:
    return build_fleet(FleetSpec.load(bundled_fleet_path()), check=check)


def records_in(tree: AuthoritativeTree, apex: DomainName) -> list[tuple[DomainName, RecordType]]:
    """(name, type) pairs owned by the zone at ``apex``."""
    zone = tree.zones[apex]
    return sorted({(rr.name, rr.rtype) for n in zone.names for rr in tree.by_name[n]},
                  key=lambda k: (k[0].sort_key(), k[1]))

"""Command-line entry point: ``dnsblock <subcommand> ...``.

Stages talk through files so every intermediate can be inspected and
diffed. Any option can also be set through the environment as
``DNSBLOCK_<OPTION>`` (upper case, dashes as underscores), e.g.
``DNSBLOCK_SEED=7``. Command-line flags win over the environment.

Exit status: 0 success, 1 input error, 2 internal invariant violation.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import shutil
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .fleet import (
    FixtureError,
    FleetMismatch,
    FleetSpec,
    ResolverFleet,
    build_fleet,
    bundled_fleet_path,
    check_expected,
    tables_for,
)
from .model import DnsError, canonicalize
from .pathfilter import (
    Packet,
    flow_decision,
    parse_hosting_map,
    parse_rules,
    proxy_decision,
    render_matrix,
    virtual_host_collateral,
)
from .probe import (
    DEFAULT_RTYPES,
    ProbePlan,
    ReferenceSet,
    SpecialAddresses,
    Target,
    aggregate,
    classify,
    load_provider_map,
    read_transcript,
    run_probes,
    write_transcript,
)
from .report import (
    Tables,
    compliance,
    interpretations,
    render_compliance,
    render_text,
    to_json,
)
from .simnet import Transport, UdpFleetServer, UdpNetwork

log = logging.getLogger("dnsblock")

ENV_PREFIX = "DNSBLOCK_"
EXIT_OK, EXIT_INPUT, EXIT_INVARIANT = 0, 1, 2

REFERENCE_FILE = "reference.json"
PROVIDER_MAP_FILE = "provider_map.tsv"

AGAINST_WARNING = (
    "WARNING: probing resolvers outside the simulated fleet. Choosing targets, "
    "and having permission to query them, is your responsibility."
)


class InputError(Exception):
    pass


def _fleet(path: Optional[str], check: bool = False) -> ResolverFleet:
    spec = FleetSpec.load(path or bundled_fleet_path())
    return build_fleet(spec, check=check)


def _write_provider_map(path: Path, mapping: dict[str, str]) -> None:
    lines = [f"{addr}\t{prov}" for addr, prov in mapping.items()]
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def cmd_simulate(args) -> int:
    fleet = _fleet(args.fleet, check=True)
    if args.virtual:
        out = Path(args.out)
        src = fleet.spec.root
        if out.resolve() != src.resolve():
            shutil.copytree(src, out, dirs_exist_ok=True)
        _write_provider_map(out / PROVIDER_MAP_FILE, fleet.provider_map)
        (out / REFERENCE_FILE).write_text(
            json.dumps({"schema": "dnsblock.reference", "version": 1,
                        "entries": fleet.reference().to_json()}, indent=1) + "\n",
            encoding="utf-8")
        print(f"snapshot written to {out} ({len(fleet.resolvers)} resolvers, "
              f"{len(set(fleet.provider_map.values()))} providers)")
        return EXIT_OK
    server = UdpFleetServer(fleet.resolvers, args.host, args.bind_base)
    try:
        server.start()
    except OSError as exc:
        raise InputError(f"cannot bind ports {args.bind_base}..."
                         f"{args.bind_base + len(fleet.resolvers) - 1}: {exc}") from None
    try:
        for endpoint, resolver in server.endpoints:
            print(f"{endpoint}\t{resolver.provider}\t{resolver.address}")
        sys.stdout.flush()
        deadline = time.monotonic() + args.duration if args.duration else None
        while deadline is None or time.monotonic() < deadline:
            time.sleep(0.1)
    except KeyboardInterrupt:
        pass
    finally:
        server.close()
    return EXIT_OK


DEFAULT_NAMES = ("stormfront.org", "www.stormfront.org", "kids.stormfront.org", "rotten.com",
                 "md.hudora.de")


def cmd_probe(args) -> int:
    targets: list[Target] = []
    if args.provider_map:
        targets = [Target(a, p) for a, p in load_provider_map(args.provider_map).items()]
    names = [canonicalize(n) for n in args.names] if args.names else None
    if args.against:
        # real sockets; the fleet (if any) only supplies probe names
        print(AGAINST_WARNING, file=sys.stderr)
        targets += [Target(ep, f"external:{ep}") for ep in args.against]
        if names is None:
            names = list(FleetSpec.load(args.fleet).probe_names) if args.fleet else [
                canonicalize(n) for n in DEFAULT_NAMES]
        network = UdpNetwork(args.timeout)
    else:
        fleet = _fleet(args.fleet)
        if not args.provider_map:
            targets = fleet.targets()
        names = names or list(fleet.spec.probe_names)
        network = fleet.network(Transport(timeout=args.timeout))
    plan = ProbePlan(targets, names, DEFAULT_RTYPES, args.timeout, args.retries,
                     args.concurrency, args.seed)
    probes = run_probes(plan, network)
    write_transcript(args.out, probes)
    print(f"{len(probes)} probes written to {args.out}")
    return EXIT_OK


def _load_reference(args) -> ReferenceSet:
    if args.reference:
        try:
            doc = json.loads(Path(args.reference).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise InputError(f"{args.reference}: {exc}") from None
        if doc.get("schema") != "dnsblock.reference" or doc.get("version") != 1:
            raise InputError(f"{args.reference}: expected schema dnsblock.reference v1")
        return ReferenceSet.from_json(doc["entries"])
    fleet = _fleet(args.fleet)
    return fleet.reference()


def _special(args) -> SpecialAddresses:
    extra = list(args.unannounced or ())
    if args.fleet or not args.unannounced:
        try:
            extra += list(FleetSpec.load(args.fleet or bundled_fleet_path()).unannounced)
        except FixtureError:
            pass
    return SpecialAddresses(unannounced=extra)


def cmd_classify(args) -> int:
    ref = _load_reference(args)
    special = _special(args)
    rows = read_transcript(args.transcript)
    probes = [p for p, _ in rows]
    verdicts = [classify(p, ref, special) for p in probes]
    write_transcript(args.out, probes, verdicts)
    counts: dict[str, int] = {}
    for v in verdicts:
        counts[v.kind.value] = counts.get(v.kind.value, 0) + 1
    summary = ", ".join(f"{k} {n}" for k, n in sorted(counts.items())) or "no probes"
    print(f"{len(verdicts)} verdicts written to {args.out}: {summary}")
    return EXIT_OK


def _reports(args):
    rows = read_transcript(args.verdicts)
    if any(v is None for _, v in rows):
        raise InputError(f"{args.verdicts}: transcript is not classified; run classify first")
    spec = FleetSpec.load(args.fleet or bundled_fleet_path())
    mapping = load_provider_map(args.provider_map) if args.provider_map else spec.provider_map()
    return spec, aggregate(rows, mapping, spec.probe_zone)


def cmd_report(args) -> int:
    spec, reports = _reports(args)
    computed = tables_for(spec, reports)
    tables = Tables(computed.web, computed.email, computed.compliance, reports)
    sys.stdout.write(render_text(tables))
    if args.json:
        Path(args.json).write_text(to_json(tables, spec.block_pages), encoding="utf-8")
    if args.check:
        problems = check_expected(spec, computed)
        if problems:
            raise FleetMismatch("; ".join(problems))
    return EXIT_OK


def cmd_compliance(args) -> int:
    spec, reports = _reports(args)
    matrix = compliance(reports, interpretations(spec.probe_zone), spec.block_pages)
    sys.stdout.write(render_compliance(matrix))
    if args.json:
        Path(args.json).write_text(to_json(Tables(compliance=matrix, reports=reports),
                                           spec.block_pages), encoding="utf-8")
    return EXIT_OK


def _parse_flow(text: str) -> Packet:
    parts = text.split(",")
    if len(parts) not in (3, 4):
        raise InputError(f"flow {text!r}: expected src,dst,port[,in|out]")
    try:
        return Packet.make(parts[0], parts[1], int(parts[2]), parts[3] if len(parts) == 4 else "out")
    except ValueError as exc:
        raise InputError(f"flow {text!r}: {exc}") from None


def cmd_whatif(args) -> int:
    rules = parse_rules(Path(args.rules).read_text(encoding="utf-8"), args.rules) \
        if args.rules else parse_rules("")
    for text in args.flow or ():
        d = flow_decision(rules.filters, _parse_flow(text))
        seen = " syn-observed" if d.syn_observed else ""
        by = f" by '{d.rule}'" if d.rule else ""
        print(f"flow {text}: {d.outcome.value}{seen}{by}")
    for url in args.url or ():
        d = proxy_decision(rules.proxies, url)
        target = f" -> {d.target}" if d.target else ""
        print(f"url {url}: {d.outcome.value}{target}")
    if args.hosting:
        path = Path(args.hosting)
        hosting = parse_hosting_map(path.read_text(encoding="utf-8"), str(path))
        rep = virtual_host_collateral(args.block or (), hosting)
        for a in rep.addresses:
            print(f"address {a.address}: blocked {len(a.intended)}, collateral {len(a.collateral)}")
        print(f"collateral sites: {rep.collateral_sites}")
        print(f"addresses with collateral: {rep.fraction_with_collateral:.4f}")
        print(f"shared addresses in map: {hosting.shared_fraction():.4f}")
    if args.matrix:
        sys.stdout.write(render_matrix())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dnsblock", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def fleet_opt(p):
        p.add_argument("--fleet", help="fleet directory or fleet.yaml (default: bundled nrw27)")

    p = sub.add_parser("simulate", help="run the simulated fleet")
    fleet_opt(p)
    p.add_argument("--virtual", action="store_true", help="write a snapshot instead of serving")
    p.add_argument("--out", default="snapshot", help="snapshot directory (virtual mode)")
    p.add_argument("--bind-base", type=int, default=15300, help="first UDP port")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--duration", type=float, default=0.0,
                   help="seconds to serve; 0 serves until interrupted")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("probe", help="probe resolvers and write a transcript")
    fleet_opt(p)
    p.add_argument("--provider-map", help="address<TAB>provider targets (default: whole fleet)")
    p.add_argument("--against", action="append", metavar="HOST:PORT",
                   help="probe an arbitrary resolver endpoint over UDP (repeatable)")
    p.add_argument("--names", nargs="+")
    p.add_argument("--out", default="transcript.jsonl")
    p.add_argument("--timeout", type=float, default=2.0)
    p.add_argument("--retries", type=int, default=1)
    p.add_argument("--concurrency", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("classify", help="classify a probe transcript")
    fleet_opt(p)
    p.add_argument("transcript")
    p.add_argument("--reference", help="reference.json from a simulate snapshot")
    p.add_argument("--unannounced", action="append", metavar="CIDR",
                   help="extra astrayment address range (repeatable)")
    p.add_argument("--out", default="verdicts.jsonl")
    p.set_defaults(func=cmd_classify)

    for name, func, help_ in (("report", cmd_report, "render effectiveness and email tables"),
                              ("compliance", cmd_compliance, "render the compliance matrix")):
        p = sub.add_parser(name, help=help_)
        fleet_opt(p)
        p.add_argument("verdicts")
        p.add_argument("--provider-map")
        p.add_argument("--json", help="also write the machine-readable report here")
        if name == "report":
            p.add_argument("--check", action="store_true",
                           help="fail (exit 2) unless the fleet's expected counts are met")
        p.set_defaults(func=func)

    p = sub.add_parser("whatif", help="filtering and circumvention analysis")
    p.add_argument("--rules", help="rule file (l3/l4/proxy lines)")
    p.add_argument("--flow", action="append", metavar="SRC,DST,PORT[,in|out]")
    p.add_argument("--url", action="append")
    p.add_argument("--hosting", help="address<TAB>site<TAB>name lines")
    p.add_argument("--block", action="append", metavar="SITE")
    p.add_argument("--matrix", action="store_true", help="render the circumvention matrix")
    p.set_defaults(func=cmd_whatif)

    _apply_env(parser)
    return parser


def _apply_env(parser: argparse.ArgumentParser, environ=None) -> None:
    environ = os.environ if environ is None else environ
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            for sub in action.choices.values():
                _apply_env(sub, environ)
            continue
        if not action.option_strings or action.dest in ("help", "version"):
            continue
        raw = environ.get(ENV_PREFIX + action.dest.upper())
        if raw is None:
            continue
        if isinstance(action, argparse._StoreTrueAction):
            action.default = raw.lower() in ("1", "true", "yes", "on")
        elif isinstance(action, argparse._AppendAction):
            action.default = raw.split(",") if action.dest != "flow" else raw.split(";")
        elif action.nargs == "+":
            action.default = raw.split()
        else:
            action.default = action.type(raw) if action.type else raw


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except FleetMismatch as exc:
        print(f"dnsblock: invariant violated: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except (InputError, DnsError, OSError, ValueError) as exc:
        print(f"dnsblock: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # noqa: BLE001 - the contract maps anything else to 2
        log.debug("internal error", exc_info=True)
        print(f"dnsblock: internal error: {exc!r}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())

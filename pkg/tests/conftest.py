from pathlib import Path

import pytest

from dnsblock.fleet import FleetSpec, build_fleet, bundled_fleet_path, tables_for
from dnsblock.simnet import AuthoritativeTree
from dnsblock.zonefile import load_zone_file

FIXTURE = bundled_fleet_path()
GOLDEN = Path(__file__).parent / "golden"


@pytest.fixture(scope="session")
def spec():
    return FleetSpec.load(FIXTURE)


@pytest.fixture(scope="session")
def tree():
    return AuthoritativeTree(load_zone_file(FIXTURE / "zones.txt"))


@pytest.fixture(scope="session")
def fleet(spec, tree):
    return build_fleet(spec, tree, check=False)


@pytest.fixture(scope="session")
def reports(fleet):
    return fleet.survey()


@pytest.fixture(scope="session")
def tables(spec, reports):
    return tables_for(spec, reports)


@pytest.fixture(scope="session")
def by_provider(reports):
    return {r.provider: r for r in reports}


# one line per acceptance criterion, printed after the run
ACCEPTANCE: dict[int, str] = {}


def record_criterion(number: int, ok: bool, detail: str) -> None:
    ACCEPTANCE[number] = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(ACCEPTANCE[number])


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])

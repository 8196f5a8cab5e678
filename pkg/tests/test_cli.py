import json
import subprocess
import sys

import pytest

from conftest import GOLDEN
from dnsblock.cli import main


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """simulate -> probe -> classify over the virtual fleet, once."""
    d = tmp_path_factory.mktemp("pipe")
    snap, trans, verd = d / "snap", d / "t.jsonl", d / "v.jsonl"
    assert main(["simulate", "--virtual", "--out", str(snap)]) == 0
    assert main(["probe", "--fleet", str(snap), "--provider-map", str(snap / "provider_map.tsv"),
                 "--out", str(trans)]) == 0
    assert main(["classify", str(trans), "--reference", str(snap / "reference.json"),
                 "--fleet", str(snap), "--out", str(verd)]) == 0
    return snap, trans, verd


def test_snapshot_contents(pipeline):
    snap, _, _ = pipeline
    lines = (snap / "provider_map.tsv").read_text().splitlines()
    assert len(lines) == 32
    ref = json.loads((snap / "reference.json").read_text())
    assert ref["schema"] == "dnsblock.reference" and ref["entries"]


def test_report_reproduces_tables(pipeline, capsys, tmp_path):
    snap, _, verd = pipeline
    capsys.readouterr()
    out_json = tmp_path / "r.json"
    assert main(["report", str(verd), "--fleet", str(snap), "--check", "--json", str(out_json)]) == 0
    text = capsys.readouterr().out
    for golden in ("table1.txt", "table2.txt", "table3.txt"):
        assert (GOLDEN / golden).read_text() in text
    doc = json.loads(out_json.read_text())
    assert doc["schema"] == "dnsblock.report"
    assert doc["web"][0]["error_rate"] == 44


def test_compliance_command(pipeline, capsys):
    snap, _, verd = pipeline
    capsys.readouterr()
    assert main(["compliance", str(verd), "--fleet", str(snap)]) == 0
    assert capsys.readouterr().out == (GOLDEN / "table3.txt").read_text()


def test_report_check_mismatch_exits_2(pipeline, tmp_path):
    snap, _, verd = pipeline
    fleet = tmp_path / "fleet"
    import shutil
    shutil.copytree(snap, fleet)
    spec = fleet / "fleet.yaml"
    spec.write_text(spec.read_text().replace("[stormfront.org, true, 12, 4, 11]",
                                             "[stormfront.org, true, 13, 3, 11]"))
    assert "13, 3, 11" in spec.read_text()
    assert main(["report", str(verd), "--fleet", str(fleet), "--check"]) == 2


def test_report_needs_classified_input(pipeline):
    _, trans, _ = pipeline
    assert main(["report", str(trans)]) == 1


def test_missing_input_exits_1(tmp_path):
    assert main(["classify", str(tmp_path / "nope.jsonl")]) == 1
    assert main(["probe", "--fleet", str(tmp_path), "--out", str(tmp_path / "t")]) == 1


def test_malformed_provider_map_exits_1(tmp_path):
    bad = tmp_path / "map.tsv"
    bad.write_text("100.64.0.1 kamp\n")
    assert main(["probe", "--provider-map", str(bad), "--out", str(tmp_path / "t")]) == 1


def test_unmapped_resolver_exits_1(pipeline, tmp_path):
    _, _, verd = pipeline
    partial = tmp_path / "map.tsv"
    partial.write_text("100.64.0.1\tkamp\n")
    assert main(["report", str(verd), "--provider-map", str(partial)]) == 1


def test_empty_target_list(tmp_path):
    empty = tmp_path / "map.tsv"
    empty.write_text("# nothing\n")
    out = tmp_path / "t.jsonl"
    assert main(["probe", "--provider-map", str(empty), "--out", str(out)]) == 0
    assert len(out.read_text().splitlines()) == 1  # schema header only


def test_env_overrides_defaults(tmp_path, monkeypatch):
    out = tmp_path / "env.jsonl"
    monkeypatch.setenv("DNSBLOCK_OUT", str(out))
    monkeypatch.setenv("DNSBLOCK_NAMES", "rotten.com")
    assert main(["probe"]) == 0
    lines = out.read_text().splitlines()
    assert len(lines) == 1 + 32 * 5
    # explicit flags still win
    other = tmp_path / "flag.jsonl"
    assert main(["probe", "--out", str(other)]) == 0
    assert other.exists()


def test_against_unreachable_records_timeouts(tmp_path, capsys):
    out = tmp_path / "t.jsonl"
    assert main(["probe", "--against", "127.0.0.1:9", "--names", "rotten.com",
                 "--timeout", "0.05", "--retries", "0", "--out", str(out)]) == 0
    assert "warning" in capsys.readouterr().err.lower()
    records = [json.loads(x) for x in out.read_text().splitlines()[1:]]
    assert records and all(r["raw"] is None for r in records)


def test_whatif(tmp_path, capsys):
    rules = tmp_path / "rules.txt"
    rules.write_text("l4 deny out 198.51.100.10 80\nproxy deny www.stormfront.org/german\n")
    hosting = tmp_path / "hosting.tsv"
    hosting.write_text("192.0.2.1\ta\ta.example\n192.0.2.1\tb\tb.example\n")
    assert main(["whatif", "--rules", str(rules),
                 "--flow", "192.0.2.5,198.51.100.10,80", "--flow", "192.0.2.5,198.51.100.10,25",
                 "--url", "http://www.stormfront.org/german/zonen.htm",
                 "--hosting", str(hosting), "--block", "a"]) == 0
    out = capsys.readouterr().out
    assert "198.51.100.10,80: DeniedImmediate" in out
    assert "198.51.100.10,25: Delivered" in out
    assert "zonen.htm: Denied" in out
    assert "collateral sites: 1" in out


def test_whatif_bad_flow_and_rules(tmp_path):
    assert main(["whatif", "--flow", "1.2.3.4,5.6.7.8"]) == 1
    rules = tmp_path / "rules.txt"
    rules.write_text("l3 deny out bogus\n")
    assert main(["whatif", "--rules", str(rules)]) == 1


def test_whatif_matrix(capsys):
    assert main(["whatif", "--matrix"]) == 0
    assert capsys.readouterr().out == (GOLDEN / "circumvention_matrix.txt").read_text()


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "dnsblock.cli", "--version"],
                         capture_output=True, text=True, check=True)
    assert out.stdout.startswith("dnsblock") or "0.1.0" in out.stdout

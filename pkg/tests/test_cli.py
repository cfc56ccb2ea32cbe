import json
import sys
from pathlib import Path

import pytest

from helpers import doc, write_dataset
from stepguide import fixture_manifest
from stepguide.agents import oracle_script
from stepguide.cli import main

FIXTURES = fixture_manifest().parent
GOLDEN = Path(__file__).parent / "golden"
FAKE = Path(__file__).parent / "fake_server.py"


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_validate(capsys, tmp_path):
    code, out, _ = run(capsys, "validate", fixture_manifest())
    assert code == 0 and "10/10 files valid" in out

    manifest = write_dataset(tmp_path, [doc("a"), doc("b")])
    (tmp_path / "b.json").write_text('{"video_id": 3}', encoding="utf-8")
    code, out, _ = run(capsys, "validate", manifest)
    assert code == 1
    assert "FAIL b" in out and "b.json" in out

    empty = tmp_path / "empty.tsv"
    empty.write_text("", encoding="utf-8")
    code, out, _ = run(capsys, "validate", empty)
    assert code == 0 and "0/0" in out


def test_plan(capsys, tmp_path):
    manifest = write_dataset(tmp_path, [doc("a")])
    code, out, _ = run(capsys, "plan", tmp_path / "a.json")
    assert code == 0 and out.splitlines() == ["1. Chop the onion", "2. Heat the pan", "3. Fry the onion"]

    _, out, _ = run(capsys, "plan", FIXTURES / "bruschetta_demo.json")
    assert out == (GOLDEN / "bruschetta_demo.plan.txt").read_text(encoding="utf-8")

    _, out, _ = run(capsys, "plan", FIXTURES / "coffee_adv.json")
    assert len(out.splitlines()) > 4  # four recorded actions, one missing step

    _, out, _ = run(capsys, "plan", FIXTURES / "coffee_adv.json", "--set", "main")
    assert len(out.splitlines()) == 4


@pytest.mark.parametrize("name", ["bruschetta_demo", "sandwich_adv"])
def test_transcript_matches_golden(capsys, tmp_path, name):
    target = tmp_path / "t.jsonl"
    code, _, _ = run(capsys, "transcript", FIXTURES / f"{name}.json", "-o", target)
    assert code == 0
    assert target.read_text(encoding="utf-8") == (GOLDEN / f"{name}.transcript.jsonl").read_text(encoding="utf-8")


def test_transcript_of_clean_video(capsys):
    _, out, _ = run(capsys, "transcript", FIXTURES / "salad_main.json")
    events = [json.loads(line) for line in out.splitlines()]
    assert not any(e["kind"] == "mistake" for e in events)
    assert events[-1]["kind"] == "done"


def test_eval_oracle_and_silent(capsys, tmp_path):
    code, out, _ = run(capsys, "eval", fixture_manifest(), "--agent", "oracle")
    assert code == 0
    assert out.splitlines()[-1].split()[:2] == ["all", "1.000"]
    code, out, _ = run(capsys, "eval", fixture_manifest(), "--agent", "silent", "--mode", "turn")
    assert code == 0
    assert out.splitlines()[-1].split()[:2] == ["all", "0.000"]


def test_eval_results_are_reproducible(capsys, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    run(capsys, "eval", fixture_manifest(), "--agent", "lagged:6", "--out", a)
    run(capsys, "eval", fixture_manifest(), "--agent", "lagged:6", "--out", a.parent / "b", "--jobs", "4")
    names = sorted(p.name for p in a.iterdir())
    assert names == sorted(p.name for p in b.iterdir())
    assert len(names) == 11
    for name in names:
        left = (a / name).read_text(encoding="utf-8")
        right = (b / name).read_text(encoding="utf-8")
        if name == "report.json":  # only the output directory differs
            left, right = left.replace(str(a), "OUT"), right.replace(str(b), "OUT")
        assert left == right


def test_report_formats(capsys, tmp_path):
    run(capsys, "eval", fixture_manifest(), "--set", "advanced", "--split", "test", "--out", tmp_path)
    code, out, _ = run(capsys, "report", tmp_path)
    assert code == 0 and "coffee_adv" in out and "pasta_adv" not in out
    code, out, _ = run(capsys, "report", tmp_path / "report.json", "--format", "structured")
    data = json.loads(out)
    assert data["ic_acc"] == 1.0 and data["config"]["set"] == "advanced"


def test_eval_remote_fake_server(capsys, tmp_path, suite):
    script = tmp_path / "script.json"
    script.write_text(json.dumps({tr.video_id: oracle_script(tr) for _, tr in suite}), encoding="utf-8")
    endpoint = f"remote:{sys.executable} {FAKE} {script}"
    code, out, _ = run(capsys, "eval", fixture_manifest(), "--agent", endpoint, "--out", tmp_path / "r")
    assert code == 0
    report = json.loads((tmp_path / "r" / "report.json").read_text(encoding="utf-8"))
    assert report["ic_acc"] == report["precision"] == report["recall"] == 1.0

    code, _, err = run(capsys, "eval", fixture_manifest(), "--agent", endpoint + " --behaviour garbage")
    assert code == 2 and "ProtocolError" in err


def test_bad_arguments(capsys):
    assert run(capsys, "eval", fixture_manifest(), "--window", "0")[0] == 1
    assert run(capsys, "eval", fixture_manifest(), "--agent", "psychic")[0] == 1
    assert run(capsys, "plan", "/no/such/file.json")[0] == 1


def test_stats(capsys):
    code, out, _ = run(capsys, "stats", fixture_manifest(), "--set", "main", "--split", "test")
    assert code == 0
    assert "instructions" in out and "main/test" in out

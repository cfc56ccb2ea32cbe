import dataclasses
from pathlib import Path

import pytest

from helpers import action, doc, mistake, video
from stepguide.data_model import video_from_dict
from stepguide.plan_builder import build_main_plan, build_plan
from stepguide.transcript import (
    DONE_TEXT,
    MissingReplanAnnotation,
    classify_divergence,
    dumps_events,
    generate_main_transcript,
    generate_transcript,
    loads_events,
    write_transcript,
)

GOLDEN = Path(__file__).parent / "golden"


def summary(tr):
    return [(e.time_s, e.kind) for e in tr.events]


def main_transcript(actions, duration=200.0):
    v = video(actions=actions, duration=duration)
    return generate_main_transcript(v, build_main_plan(v))


def test_single_action():
    tr = main_transcript([action(1, "Crack the egg", 0.0, 10.0)])
    assert summary(tr) == [(0.0, "instruction"), (10.0, "success"), (10.0, "done")]
    assert tr.events[-1].text == DONE_TEXT
    assert tr.events[1].text == "You have successfully completed: Crack the egg."


def test_mistake_reported_when_it_happens():
    tr = main_transcript([action(1, "Crack the egg", 0.0, 10.0, mistake=mistake(7.0, "Shell fell in.")),
                          action(2, "Whisk", 12.0, 20.0)])
    assert summary(tr) == [(0.0, "instruction"), (7.0, "mistake"), (10.0, "instruction"),
                           (20.0, "success"), (20.0, "done")]
    assert tr.events[1].text == "Shell fell in."


def test_compound_step_waits_for_the_whole_group():
    tr = main_transcript([action(1, "A", 0.0, 100.0), action(2, "B", 10.0, 20.0),
                          action(3, "C", 110.0, 120.0)])
    assert summary(tr) == [(0.0, "instruction"), (20.0, "success"), (100.0, "success"),
                           (100.0, "instruction"), (120.0, "success"), (120.0, "done")]
    assert tr.events[0].text == "A. B."


def test_classify_divergence():
    v = video()
    plan, _ = build_main_plan(v)
    first = plan.steps[0]
    assert classify_divergence(v.action(1), first) == "followed"
    assert classify_divergence(v.action(2), first) == "divergent"
    variant = dataclasses.replace(v.action(1), description="  chop THE   onion. ")
    assert classify_divergence(variant, first) == "followed"
    assert classify_divergence(v.action(1), None) == "divergent"


@pytest.mark.parametrize("name", sorted(p.name.split(".")[0] for p in GOLDEN.glob("*.jsonl")))
def test_golden_transcripts(name, by_id):
    v, tr = by_id[name]
    assert dumps_events(tr.events) == (GOLDEN / f"{name}.transcript.jsonl").read_text(encoding="utf-8")


def test_every_fixture_has_a_golden(by_id):
    assert {p.name.split(".")[0] for p in GOLDEN.glob("*.jsonl")} == set(by_id)


def test_divergence_prefixes(by_id):
    _, coffee = by_id["coffee_adv"]
    _, ramen = by_id["ramen_adv"]
    texts = [e.text for e in coffee.events + ramen.events if e.divergent]
    assert any(t.startswith("You did not follow the instruction.") for t in texts)
    assert any(t.startswith("You are not following the instruction.") for t in texts)


def test_repeat_after_divergence(by_id):
    _, tr = by_id["ramen_adv"]
    instr = [e for e in tr.events if e.kind == "instruction"]
    assert instr[0].text == instr[1].text == "Boil water in a pot."
    assert tr.replan_count == 2


def test_protocol_invariants(suite):
    for v, tr in suite:
        ev = tr.events
        assert ev[0].kind == "instruction"
        assert ev[0].time_s == min(a.start_s for a in v.actions)
        assert [e.kind for e in ev].count("done") == 1 and ev[-1].kind == "done"
        assert all(a.time_s <= b.time_s for a, b in zip(ev, ev[1:]))
        feedback = [e for e in ev if e.kind in ("success", "mistake")]
        assert len(feedback) == len(v.actions)
        ends = {a.end_s for a in v.actions}
        mistake_times = {m.time_s for m in v.mistakes}
        for e in feedback:
            if e.kind == "success":
                assert e.time_s in ends
            else:
                assert e.time_s in mistake_times or (e.divergent and e.time_s in ends)


def test_simultaneous_feedback_precedes_instruction(suite):
    rank = {"success": 0, "mistake": 0, "instruction": 1, "done": 2}
    for _, tr in suite:
        for a, b in zip(tr.events, tr.events[1:]):
            if a.time_s == b.time_s:
                assert rank[a.kind] <= rank[b.kind]


def test_divergence_free_advanced_equals_main(by_id):
    v, tr = by_id["eggs_adv"]
    main = generate_main_transcript(v, build_main_plan(v))
    assert tr.events == main.events


def test_missing_replan_annotation(by_id):
    v, _ = by_id["coffee_adv"]
    stripped = dataclasses.replace(v, replans=())
    with pytest.raises(MissingReplanAnnotation):
        generate_transcript(stripped, build_plan(stripped))


def test_feedback_override_is_verbatim():
    d = doc(feedback_texts={"2": "Nice, the pan is hot"})
    v = video_from_dict(d)
    tr = generate_transcript(v, build_plan(v))
    assert "Nice, the pan is hot" in [e.text for e in tr.events]


def test_file_round_trip(tmp_path, by_id):
    _, tr = by_id["sandwich_adv"]
    path = tmp_path / "t.jsonl"
    write_transcript(tr, path)
    assert loads_events(path.read_text(encoding="utf-8")) == list(tr.events)

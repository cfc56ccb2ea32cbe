"""Timed ground-truth guidance transcripts (instructions and feedback)."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from .data_model import ActionSegment, VideoAnnotation
from .plan_builder import ActionGroupSchedule, Plan, PlanStep
from .textmetrics import same_text

DONE_TEXT = "You have finished all the steps."
DID_NOT_FOLLOW = "You did not follow the instruction."
NOT_FOLLOWING = "You are not following the instruction."

KINDS = ("instruction", "success", "mistake", "done")
# simultaneous events: feedback first, then the next instruction, then done
_KIND_RANK = {"success": 0, "mistake": 0, "instruction": 1, "done": 2}


class TranscriptError(Exception):
    pass


class MissingReplanAnnotation(TranscriptError):
    pass


@dataclass(frozen=True)
class GuidanceEvent:
    time_s: float
    kind: str
    text: str
    step_index: int
    divergent: bool = False
    # source action of feedback events; kept in memory only
    action_id: int | None = field(default=None, compare=False)

    def to_dict(self) -> dict:
        return {"time_s": self.time_s, "kind": self.kind, "text": self.text,
                "step_index": self.step_index, "divergent": self.divergent}


@dataclass(frozen=True)
class SessionTranscript:
    video_id: str
    events: tuple[GuidanceEvent, ...]
    plan: Plan
    replan_count: int = 0

    @property
    def instructions(self) -> list[GuidanceEvent]:
        return [e for e in self.events if e.kind == "instruction"]


def _strip_end(text: str) -> str:
    return text.strip().rstrip(".!?").rstrip()


def success_text(description: str) -> str:
    return f"You have successfully completed: {_strip_end(description)}."


def feedback_for(video: VideoAnnotation, action: ActionSegment, divergent: bool) -> str:
    if video.feedback_texts and action.action_id in video.feedback_texts:
        return video.feedback_texts[action.action_id]
    if not divergent:
        return action.mistake.description if action.mistake else success_text(action.description)
    if action.mistake is None:
        return f"{DID_NOT_FOLLOW} You performed: {_strip_end(action.description)}."
    return (f"{NOT_FOLLOWING} You are trying to: {_strip_end(action.description)}. "
            f"{action.mistake.description}")


def _feedback_event(video: VideoAnnotation, action: ActionSegment, step_index: int,
                    divergent: bool) -> GuidanceEvent:
    if action.mistake is not None:
        time_s, kind = action.mistake.time_s, "mistake"
    else:
        time_s, kind = action.end_s, "mistake" if divergent else "success"
    return GuidanceEvent(time_s, kind, feedback_for(video, action, divergent), step_index,
                         divergent, action.action_id)


def _ordered(events: Iterable[GuidanceEvent]) -> tuple[GuidanceEvent, ...]:
    return tuple(sorted(events, key=lambda e: (e.time_s, _KIND_RANK[e.kind])))


def generate_main_transcript(video: VideoAnnotation,
                             planned: tuple[Plan, ActionGroupSchedule]) -> SessionTranscript:
    plan, schedule = planned
    groups = schedule.groups
    index_of = {aid: i for i, step in enumerate(plan.steps) for aid in step.action_ids}
    events = [GuidanceEvent(groups[0].start_s, "instruction", plan.steps[0].instruction, 0)]
    for k, group in enumerate(groups):
        for aid in group.step.action_ids:
            events.append(_feedback_event(video, video.action(aid), index_of[aid], False))
        if k + 1 < len(groups):
            events.append(GuidanceEvent(group.end_s, "instruction",
                                        plan.steps[k + 1].instruction, k + 1))
        else:
            events.append(GuidanceEvent(group.end_s, "done", DONE_TEXT, len(plan.steps)))
    return SessionTranscript(video.video_id, _ordered(events), plan)


def classify_divergence(action: ActionSegment, current: PlanStep | None) -> str:
    """``followed`` iff the action's text is among the current step's descriptions."""
    if current is not None and any(same_text(action.description, d) for d in current.descriptions):
        return "followed"
    return "divergent"


def _drop(step: PlanStep, pos: int) -> PlanStep | None:
    if len(step.descriptions) == 1:
        return None
    keep = [i for i in range(len(step.descriptions)) if i != pos]
    return PlanStep(tuple(step.descriptions[i] for i in keep), tuple(step.action_ids[i] for i in keep),
                    tuple(step.step_refs[i] for i in keep))


def generate_advanced_transcript(video: VideoAnnotation,
                                 planned: tuple[Plan, ActionGroupSchedule]) -> SessionTranscript:
    plan, schedule = planned
    groups = schedule.groups
    replan_for = {r.after_action_id: r for r in video.replans}
    # (initial index, remaining part of step); the front entry is the current step and
    # becomes None once emptied, until its group ends
    remaining: list[tuple[int, PlanStep | None]] = list(enumerate(plan.steps))

    events = [GuidanceEvent(groups[0].start_s, "instruction", plan.steps[0].instruction, 0)]
    replans = 0
    for k, group in enumerate(groups):
        for aid in group.step.action_ids:
            action = video.action(aid)
            current = remaining[0][1] if remaining else None
            if classify_divergence(action, current) == "followed":
                pos = next(i for i, d in enumerate(current.descriptions)
                           if same_text(action.description, d))
                if aid in current.action_ids:
                    pos = current.action_ids.index(aid)
                index = remaining[0][0]
                remaining[0] = (index, _drop(current, pos))
                events.append(_feedback_event(video, action, index, False))
                continue
            index = -1
            for j, (orig, step) in enumerate(remaining):
                if step is not None and aid in step.action_ids:
                    index = orig
                    rest = _drop(step, step.action_ids.index(aid))
                    if rest is None:
                        del remaining[j]
                    else:
                        remaining[j] = (orig, rest)
                    break
            events.append(_feedback_event(video, action, index, True))

        if k + 1 == len(groups):
            events.append(GuidanceEvent(group.end_s, "done", DONE_TEXT, len(plan.steps)))
            break
        if remaining and remaining[0][1] is None:
            del remaining[0]
        elif remaining:
            decision = None
            for a in sorted(group.step.action_ids, key=lambda i: video.action(i).end_s):
                decision = replan_for.get(a, decision)
            if decision is None:
                raise MissingReplanAnnotation(
                    f"video {video.video_id}: step {remaining[0][0]} unfinished after actions "
                    f"{list(group.step.action_ids)} and no re-plan decision is stored")
            replans += 1
            if not decision.repeat_current:
                del remaining[0]

        if remaining:
            orig, step = remaining[0]
            events.append(GuidanceEvent(group.end_s, "instruction", step.instruction, orig))
    return SessionTranscript(video.video_id, _ordered(events), plan, replans)


def generate_transcript(video: VideoAnnotation,
                        planned: tuple[Plan, ActionGroupSchedule]) -> SessionTranscript:
    if video.set == "advanced":
        return generate_advanced_transcript(video, planned)
    return generate_main_transcript(video, planned)


def dumps_events(events: Iterable[GuidanceEvent]) -> str:
    return "".join(json.dumps(e.to_dict(), ensure_ascii=False) + "\n" for e in events)


def write_transcript(transcript: SessionTranscript, path: str | Path) -> None:
    Path(path).write_text(dumps_events(transcript.events), encoding="utf-8")


def loads_events(text: str) -> list[GuidanceEvent]:
    events = []
    for line in text.splitlines():
        if line.strip():
            d = json.loads(line)
            events.append(GuidanceEvent(float(d["time_s"]), d["kind"], d["text"],
                                        int(d["step_index"]), bool(d["divergent"])))
    return events

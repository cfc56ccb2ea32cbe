"""Streaming and turn-based evaluation with temporal window matching.

Agent events are matched to the ground-truth transcript inside a window
centred on each ground-truth time.  Both completion and mistake scoring are
gated on the instruction the agent has in force, so an agent that lost track
of the plan is not credited with detections for steps it never instructed.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

from .agents import (
    DEFAULT_FPS,
    Agent,
    AgentEvent,
    AgentFactory,
    AgentFailure,
    SessionInit,
    make_ticks,
    run_agent,
)
from .data_model import VideoAnnotation
from .textmetrics import rouge_l_text, same_text
from .transcript import GuidanceEvent, SessionTranscript

logger = logging.getLogger(__name__)

_EPS = 1e-9


@dataclass(frozen=True)
class MatchWindow:
    width_s: float = 30.0
    inclusive: bool = True

    def __post_init__(self) -> None:
        if not self.width_s > 0:
            raise ValueError("window width must be positive")

    @property
    def half(self) -> float:
        return self.width_s / 2

    def contains(self, center_s: float, t: float) -> bool:
        d = abs(t - center_s)
        return d <= self.half + _EPS if self.inclusive else d < self.half - _EPS

    def bounds(self, center_s: float) -> tuple[float, float]:
        return center_s - self.half, center_s + self.half


@dataclass(frozen=True)
class MistakeConfusion:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __add__(self, other: MistakeConfusion) -> MistakeConfusion:
        return MistakeConfusion(self.tp + other.tp, self.fp + other.fp,
                                self.fn + other.fn, self.tn + other.tn)


def precision_recall_f1(c: MistakeConfusion) -> tuple[float | None, float | None, float]:
    """Precision and recall are None when undefined; F1 is then 0."""
    p = c.tp / (c.tp + c.fp) if c.tp + c.fp else None
    r = c.tp / (c.tp + c.fn) if c.tp + c.fn else None
    f1 = 2 * p * r / (p + r) if p and r else 0.0
    return p, r, f1


# ------------------------------------------------------------ ground truth


@dataclass(frozen=True)
class InstructionSpan:
    """One ground-truth instruction, from issue time to completion time."""

    index: int
    text: str
    start_s: float
    end_s: float
    next_text: str | None
    mistakes: tuple[GuidanceEvent, ...]

    @property
    def clean(self) -> bool:
        return not self.mistakes


def instruction_spans(transcript: SessionTranscript) -> list[InstructionSpan]:
    """Split the transcript at instructions; feedback belongs to the
    instruction in force when it is given."""
    spans: list[dict] = []
    for ev in transcript.events:
        if ev.kind in ("instruction", "done"):
            if spans:
                spans[-1]["end_s"] = ev.time_s
                if ev.kind == "instruction":
                    spans[-1]["next_text"] = ev.text
            if ev.kind == "instruction":
                spans.append(dict(text=ev.text, start_s=ev.time_s, end_s=math.inf,
                                  next_text=None, mistakes=[]))
        elif ev.kind == "mistake" and spans:
            spans[-1]["mistakes"].append(ev)
    return [InstructionSpan(i, s["text"], s["start_s"], s["end_s"], s["next_text"],
                            tuple(s["mistakes"])) for i, s in enumerate(spans)]


# ------------------------------------------------------------ sessions


@dataclass
class SessionLog:
    video_id: str
    mode: str
    first_instruction: str
    events: list[AgentEvent] = field(default_factory=list)
    failure: str | None = None
    tick_count: int = 0

    def in_force_before(self) -> list[str]:
        """Agent instruction in force just before each event."""
        current = self.first_instruction
        out = []
        for ev in self.events:
            out.append(current)
            if ev.kind == "instruction":
                current = ev.text
        return out

    def opening_restatement(self) -> int | None:
        """Index of a streaming agent's opening instruction event when it
        merely repeats the instruction the session was seeded with.

        In a turn the harness gave the instruction, so an agent that issues
        it again is asking for a repeat, which is a real signal.
        """
        if self.mode == "turn":
            return None
        for k, ev in enumerate(self.events):
            if ev.kind == "instruction":
                return k if same_text(ev.text, self.first_instruction) else None
        return None

    def instruction_periods(self) -> list[tuple[float, float, str]]:
        periods = []
        start, current = -math.inf, self.first_instruction
        for ev in self.events:
            if ev.kind == "instruction":
                periods.append((start, ev.time_s, current))
                start, current = ev.time_s, ev.text
        periods.append((start, math.inf, current))
        return periods


def drive_session(agent: Agent, init: SessionInit, ticks: Sequence, video_id: str) -> SessionLog:
    log = SessionLog(video_id, init.mode, init.first_instruction, tick_count=len(ticks))
    try:
        for ev in run_agent(agent, init, ticks):
            log.events.append(ev)
    except AgentFailure as exc:
        log.failure = f"{type(exc).__name__}: {exc}"
        logger.warning("agent failed on %s: %s", video_id, exc)
        abort = getattr(agent, "abort", None)
        if abort is not None:
            abort()
    return log


def run_streaming_session(video: VideoAnnotation, transcript: SessionTranscript, agent: Agent,
                          window: MatchWindow = MatchWindow(), fps: float = DEFAULT_FPS
                          ) -> SessionLog:
    """Drive ``agent`` over the whole video at ``fps`` against the fixed recording."""
    plan = tuple(transcript.plan.instructions)
    first = transcript.instructions[0].text
    init = SessionInit(video.video_id, plan, first, "streaming", 0.0)
    return drive_session(agent, init, make_ticks(0.0, video.duration_s, fps, video.video_id),
                         video.video_id)


# ------------------------------------------------------------ matching


@dataclass
class Matches:
    ic_num: int = 0
    ic_den: int = 0
    confusion: MistakeConfusion = MistakeConfusion()
    tp_pairs: list[tuple[str, str]] = field(default_factory=list)
    outcomes: dict[int, str] = field(default_factory=dict)


def match_completions(log: SessionLog, spans: Sequence[InstructionSpan], window: MatchWindow,
                      outcomes: dict[int, str] | None = None) -> tuple[int, int]:
    """Count ground-truth instructions whose completion the agent signalled.

    A signal is a success event, or the issue of the next ground-truth
    instruction, emitted inside the window around the completion time while
    the agent had that instruction in force.  Each signal is used at most
    once; earlier completions choose first, nearest signal wins.
    """
    in_force = log.in_force_before()
    # restating the seeded instruction is not an advance past it
    opening = log.opening_restatement()
    used: set[int] = set() if opening is None else {opening}
    num = 0
    for span in sorted(spans, key=lambda s: s.end_s):
        best = None
        for k, ev in enumerate(log.events):
            if k in used or not window.contains(span.end_s, ev.time_s):
                continue
            if not same_text(in_force[k], span.text):
                continue
            if ev.kind == "success":
                pass
            elif ev.kind == "instruction" and span.next_text is not None \
                    and same_text(ev.text, span.next_text):
                pass
            else:
                continue
            if best is None or abs(ev.time_s - span.end_s) < abs(log.events[best].time_s - span.end_s):
                best = k
        if best is not None:
            used.add(best)
            num += 1
            if outcomes is not None:
                outcomes[best] = f"completion:{span.index}"
    return num, len(spans)


def match_mistakes(log: SessionLog, spans: Sequence[InstructionSpan], window: MatchWindow,
                   outcomes: dict[int, str] | None = None
                   ) -> tuple[MistakeConfusion, list[tuple[str, str]]]:
    """Window-matched mistake confusion counts plus (agent, truth) text pairs of the TPs.

    Ground-truth mistakes count only if the agent held their instruction
    somewhere inside their window; agent mistakes count only if their
    in-force instruction was the ground-truth one somewhere inside theirs.
    """
    h = window.half
    in_force = log.in_force_before()
    periods = log.instruction_periods()

    def agent_held(text: str, lo: float, hi: float) -> bool:
        return any(s <= hi + _EPS and e >= lo - _EPS and same_text(t, text) for s, e, t in periods)

    gt = [(m, span) for span in spans for m in span.mistakes]
    gt_gated = [i for i, (m, span) in enumerate(gt) if agent_held(span.text, *window.bounds(m.time_s))]

    agent = [k for k, ev in enumerate(log.events) if ev.kind == "mistake"]
    agent_gated = []
    for k in agent:
        t = log.events[k].time_s
        if any(same_text(in_force[k], s.text) and s.start_s - h - _EPS <= t <= s.end_s + h + _EPS
               for s in spans):
            agent_gated.append(k)
        elif outcomes is not None:
            outcomes[k] = "ungated"

    pairs = []
    for i in gt_gated:
        m, span = gt[i]
        for k in agent_gated:
            t = log.events[k].time_s
            if window.contains(m.time_s, t) and same_text(in_force[k], span.text):
                pairs.append((abs(t - m.time_s), m.time_s, t, i, k))
    pairs.sort()
    gt_used: set[int] = set()
    agent_used: set[int] = set()
    tp_pairs = []
    for _, _, _, i, k in pairs:
        if i in gt_used or k in agent_used:
            continue
        gt_used.add(i)
        agent_used.add(k)
        tp_pairs.append((log.events[k].text, gt[i][0].text))
        if outcomes is not None:
            outcomes[k] = f"tp:{gt[i][0].time_s:g}"
    if outcomes is not None:
        for k in agent_gated:
            if k not in agent_used:
                outcomes[k] = "fp"

    # a clean step is a true negative unless a false alarm was raised under it;
    # detections matched to a neighbouring step's mistake do not count against it
    false_alarms = [k for k in agent_gated if k not in agent_used]
    tn = 0
    for s in spans:
        if not s.clean or not agent_held(s.text, s.start_s - h, s.end_s + h):
            continue
        if not any(same_text(in_force[k], s.text) and s.start_s - h - _EPS <= log.events[k].time_s
                   <= s.end_s + h + _EPS for k in false_alarms):
            tn += 1
    confusion = MistakeConfusion(tp=len(gt_used), fp=len(agent_gated) - len(agent_used),
                                 fn=len(gt_gated) - len(gt_used), tn=tn)
    return confusion, tp_pairs


def score_fluency(tp_pairs: Iterable[tuple[str, str]],
                  scorer: Callable[[str, str], float] = rouge_l_text) -> float | None:
    """Mean text score over true-positive (agent, truth) pairs; None if there are none."""
    scores = [scorer(agent, truth) for agent, truth in tp_pairs]
    return sum(scores) / len(scores) if scores else None


def score_session(log: SessionLog, spans: Sequence[InstructionSpan],
                  window: MatchWindow) -> Matches:
    out = Matches()
    out.ic_num, out.ic_den = match_completions(log, spans, window, out.outcomes)
    out.confusion, out.tp_pairs = match_mistakes(log, spans, window, out.outcomes)
    return out


# ------------------------------------------------------------ reports


@dataclass(frozen=True)
class VideoResult:
    video_id: str
    ic_num: int
    ic_den: int
    confusion: MistakeConfusion
    rouge_sum: float
    rouge_n: int
    failure: str | None = None
    logs: tuple[SessionLog, ...] = field(default=(), compare=False, repr=False)
    outcomes: tuple[dict, ...] = field(default=(), compare=False, repr=False)


@dataclass(frozen=True)
class EvalReport:
    ic_num: int
    ic_den: int
    confusion: MistakeConfusion
    rouge_sum: float
    rouge_n: int
    per_video: tuple[VideoResult, ...] = ()

    @property
    def ic_acc(self) -> float:
        return self.ic_num / self.ic_den if self.ic_den else 0.0

    @property
    def precision(self) -> float | None:
        return precision_recall_f1(self.confusion)[0]

    @property
    def recall(self) -> float | None:
        return precision_recall_f1(self.confusion)[1]

    @property
    def f1(self) -> float:
        return precision_recall_f1(self.confusion)[2]

    @property
    def rouge_l_mean(self) -> float | None:
        return self.rouge_sum / self.rouge_n if self.rouge_n else None

    @property
    def failures(self) -> list[VideoResult]:
        return [v for v in self.per_video if v.failure]

    def to_dict(self) -> dict:
        c = self.confusion
        return {
            "ic_acc": self.ic_acc, "ic_num": self.ic_num, "ic_den": self.ic_den,
            "tp": c.tp, "fp": c.fp, "fn": c.fn, "tn": c.tn,
            "precision": self.precision, "recall": self.recall, "f1": self.f1,
            "rouge_l_mean": self.rouge_l_mean, "rouge_l_n": self.rouge_n,
            "per_video": [video_row(v) for v in self.per_video],
        }


def video_row(v: VideoResult) -> dict:
    c = v.confusion
    p, r, f1 = precision_recall_f1(c)
    return {
        "video_id": v.video_id, "ic_num": v.ic_num, "ic_den": v.ic_den,
        "ic_acc": v.ic_num / v.ic_den if v.ic_den else 0.0,
        "tp": c.tp, "fp": c.fp, "fn": c.fn, "tn": c.tn,
        "precision": p, "recall": r, "f1": f1,
        "rouge_l_mean": v.rouge_sum / v.rouge_n if v.rouge_n else None, "rouge_l_n": v.rouge_n,
        "failure": v.failure,
    }


def report_from_dict(d: dict) -> EvalReport:
    def confusion(row: dict) -> MistakeConfusion:
        return MistakeConfusion(row["tp"], row["fp"], row["fn"], row["tn"])

    def rouge_sum(row: dict) -> float:
        return (row["rouge_l_mean"] or 0.0) * row["rouge_l_n"]

    videos = tuple(VideoResult(r["video_id"], r["ic_num"], r["ic_den"], confusion(r), rouge_sum(r),
                               r["rouge_l_n"], r.get("failure")) for r in d.get("per_video", []))
    return EvalReport(d["ic_num"], d["ic_den"], confusion(d), rouge_sum(d), d["rouge_l_n"], videos)


def aggregate_report(results: Iterable[VideoResult]) -> EvalReport:
    """Micro-average: sums numerators and denominators over all videos."""
    results = tuple(results)
    confusion = MistakeConfusion()
    for r in results:
        confusion = confusion + r.confusion
    return EvalReport(
        ic_num=sum(r.ic_num for r in results),
        ic_den=sum(r.ic_den for r in results),
        confusion=confusion,
        rouge_sum=sum(r.rouge_sum for r in results),
        rouge_n=sum(r.rouge_n for r in results),
        per_video=results,
    )


def _result(video_id: str, logs: Sequence[SessionLog], matches: Sequence[Matches],
            scorer: Callable[[str, str], float]) -> VideoResult:
    confusion = MistakeConfusion()
    for m in matches:
        confusion = confusion + m.confusion
    scores = [scorer(a, g) for m in matches for a, g in m.tp_pairs]
    failures = [log.failure for log in logs if log.failure]
    return VideoResult(video_id, sum(m.ic_num for m in matches), sum(m.ic_den for m in matches),
                       confusion, sum(scores), len(scores), "; ".join(failures) or None,
                       tuple(logs), tuple(m.outcomes for m in matches))


def evaluate_streaming(video: VideoAnnotation, transcript: SessionTranscript, agent: Agent,
                       window: MatchWindow = MatchWindow(), fps: float = DEFAULT_FPS,
                       scorer: Callable[[str, str], float] = rouge_l_text) -> VideoResult:
    log = run_streaming_session(video, transcript, agent, window, fps)
    matches = score_session(log, instruction_spans(transcript), window)
    return _result(video.video_id, [log], [matches], scorer)


def _truncate_after_advance(log: SessionLog) -> SessionLog:
    for k, ev in enumerate(log.events):
        if ev.kind == "instruction":
            log.events = log.events[:k + 1]
            break
    return log


def evaluate_turn_based(video: VideoAnnotation, transcript: SessionTranscript,
                        agent_factory: AgentFactory, window: MatchWindow = MatchWindow(),
                        fps: float = DEFAULT_FPS,
                        scorer: Callable[[str, str], float] = rouge_l_text) -> VideoResult:
    """Score every ground-truth instruction in its own fresh session.

    The session opens with the ground-truth instruction in force and runs
    from its issue time to the window end after its completion.  Agent
    events after the agent's first instruction (its advance to the next
    step) belong to a later turn and are dropped.
    """
    plan = tuple(transcript.plan.instructions)
    logs, matches = [], []
    for span in instruction_spans(transcript):
        end = min(span.end_s + window.half, video.duration_s)
        init = SessionInit(f"{video.video_id}/{span.index}", plan, span.text, "turn", span.start_s)
        ticks = make_ticks(span.start_s, end, fps, video.video_id)
        log = drive_session(agent_factory(transcript), init, ticks, video.video_id)
        log = _truncate_after_advance(log)
        logs.append(log)
        matches.append(score_session(log, [span], window))
    return _result(video.video_id, logs, matches, scorer)


def run_turn_based(video: VideoAnnotation, transcript: SessionTranscript,
                   agent_factory: AgentFactory, window: MatchWindow = MatchWindow(),
                   fps: float = DEFAULT_FPS) -> EvalReport:
    return aggregate_report([evaluate_turn_based(video, transcript, agent_factory, window, fps)])


def session_log_dict(result: VideoResult) -> dict:
    sessions = []
    for log, outcomes in zip(result.logs, result.outcomes):
        in_force = log.in_force_before()
        sessions.append({
            "mode": log.mode, "first_instruction": log.first_instruction,
            "ticks": log.tick_count, "failure": log.failure,
            "events": [dict(ev.to_dict(), in_force=in_force[k], outcome=outcomes.get(k, ""))
                       for k, ev in enumerate(log.events)],
        })
    return {"video_id": result.video_id, "metrics": video_row(result), "sessions": sessions}

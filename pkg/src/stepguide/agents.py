"""Streaming agent contract and reference agents.

An agent is driven by one session at a time: ``start`` receives the
:class:`SessionInit`, ``step`` is called once per :class:`Tick` in time
order and returns the events emitted at that tick, and ``close`` may flush
trailing events (stamped with the last tick time) before the session ends.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Iterator, Protocol, Sequence

from .textmetrics import same_text
from .transcript import SessionTranscript

AGENT_KINDS = ("instruction", "success", "mistake")
DEFAULT_FPS = 2.0
ALARM_TEXT = "You made a mistake."

_EPS = 1e-9


class AgentFailure(Exception):
    """The agent could not continue; the session is scored as far as it got."""


@dataclass(frozen=True)
class Tick:
    time_s: float
    frame_ref: str


@dataclass(frozen=True)
class SessionInit:
    session_id: str
    plan: tuple[str, ...]
    first_instruction: str
    mode: str = "streaming"
    start_s: float = 0.0

    def __post_init__(self) -> None:
        if not self.plan:
            raise ValueError("session plan is empty")
        if self.mode not in ("streaming", "turn"):
            raise ValueError(f"unknown mode {self.mode!r}")


@dataclass(frozen=True)
class AgentEvent:
    time_s: float
    kind: str
    text: str

    def to_dict(self) -> dict:
        return {"time_s": self.time_s, "kind": self.kind, "text": self.text}


class Agent(Protocol):
    def start(self, init: SessionInit) -> None: ...

    def step(self, tick: Tick) -> list[AgentEvent]: ...

    def close(self) -> list[AgentEvent]: ...


AgentFactory = Callable[[SessionTranscript], Agent]


def make_ticks(start_s: float, end_s: float, fps: float = DEFAULT_FPS,
               video_id: str = "") -> list[Tick]:
    """Ticks on the global frame grid ``k / fps`` with ``start_s <= t <= end_s``.

    Frame ``k`` covers ``((k - 1) / fps, k / fps]``; ``k`` starts at 1, so a
    session over ``[0, d]`` has ``ceil(d * fps)`` ticks.
    """
    if fps <= 0:
        raise ValueError("fps must be positive")
    first = max(1, math.ceil(start_s * fps - _EPS))
    last = math.ceil(end_s * fps - _EPS)
    return [Tick(k / fps, f"{video_id}#{k}") for k in range(first, last + 1)]


def run_agent(agent: Agent, init: SessionInit, ticks: Iterable[Tick]) -> Iterator[AgentEvent]:
    """Drive ``agent`` causally over ``ticks``, checking the event contract."""
    agent.start(init)
    last: float | None = None
    for tick in ticks:
        if last is not None and tick.time_s <= last:
            raise ValueError("ticks must be strictly increasing in time")
        last = tick.time_s
        for ev in agent.step(tick):
            yield _checked(ev, tick.time_s)
    for ev in agent.close():
        yield _checked(ev, last if last is not None else init.start_s)


def _checked(ev: AgentEvent, time_s: float) -> AgentEvent:
    if ev.kind not in AGENT_KINDS:
        raise AgentFailure(f"agent emitted unknown event kind {ev.kind!r}")
    if abs(ev.time_s - time_s) > _EPS:
        raise AgentFailure(f"event at {ev.time_s} emitted on tick {time_s}")
    return ev


class SilentAgent:
    def start(self, init: SessionInit) -> None:
        pass

    def step(self, tick: Tick) -> list[AgentEvent]:
        return []

    def close(self) -> list[AgentEvent]:
        return []


def oracle_script(transcript: SessionTranscript) -> list[tuple[float, str, str]]:
    """Ground-truth events as (time, kind, text); the final ``done`` message
    becomes a success event because agents have no ``done`` kind."""
    return [(e.time_s, "success" if e.kind == "done" else e.kind, e.text) for e in transcript.events]


class ReplayAgent:
    """Replays scripted events, each at the first tick at or after ``time + lag``.

    In turn mode the script is resumed just after the instruction the
    session was opened with, so history before the turn is never replayed.
    """

    def __init__(self, script: Sequence[tuple[float, str, str]], lag_s: float = 0.0,
                 alarm_text: str | None = None):
        self.script = sorted(script, key=lambda e: e[0])
        self.lag_s = lag_s
        self.alarm_text = alarm_text
        self._init: SessionInit | None = None
        self._cursor = 0

    def start(self, init: SessionInit) -> None:
        self._init = init
        self._cursor = 0
        if init.mode == "turn":
            self._cursor = self._resume_point(init)

    def _resume_point(self, init: SessionInit) -> int:
        # the same text can be instructed twice (a repeat), so take the
        # occurrence issued closest to the start of the turn
        best = None
        for i, (t, kind, text) in enumerate(self.script):
            if kind == "instruction" and same_text(text, init.first_instruction):
                if best is None or abs(t - init.start_s) < abs(self.script[best][0] - init.start_s):
                    best = i
        if best is not None:
            return best + 1
        return next((i for i, e in enumerate(self.script) if e[0] >= init.start_s - _EPS),
                    len(self.script))

    def step(self, tick: Tick) -> list[AgentEvent]:
        out = []
        while (self._cursor < len(self.script)
               and self.script[self._cursor][0] + self.lag_s <= tick.time_s + _EPS):
            _, kind, text = self.script[self._cursor]
            out.append(AgentEvent(tick.time_s, kind, text))
            self._cursor += 1
        if self.alarm_text is not None:
            out.append(AgentEvent(tick.time_s, "mistake", self.alarm_text))
        return out

    def close(self) -> list[AgentEvent]:
        return []


def oracle_agent(transcript: SessionTranscript) -> ReplayAgent:
    return ReplayAgent(oracle_script(transcript))


def lagged_oracle(transcript: SessionTranscript, lag_s: float) -> ReplayAgent:
    return ReplayAgent(oracle_script(transcript), lag_s=lag_s)


def alarmist_agent(transcript: SessionTranscript, text: str = ALARM_TEXT) -> ReplayAgent:
    script = [e for e in oracle_script(transcript) if e[1] != "mistake"]
    return ReplayAgent(script, alarm_text=text)


def parse_agent_spec(spec: str, prompt_interval_s: float = 5.0,
                     timeout_s: float = 30.0) -> AgentFactory:
    """``oracle | silent | alarmist | lagged:<seconds> | remote:<endpoint>``."""
    name, _, arg = spec.partition(":")
    if name == "oracle" and not arg:
        return oracle_agent
    if name == "silent" and not arg:
        return lambda transcript: SilentAgent()
    if name == "alarmist" and not arg:
        return alarmist_agent
    if name == "lagged":
        try:
            lag = float(arg)
        except ValueError:
            raise ValueError(f"bad lag in agent spec {spec!r}") from None
        return lambda transcript: lagged_oracle(transcript, lag)
    if name == "remote" and arg:
        from .remote import remote_agent

        return lambda transcript: remote_agent(arg, prompt_interval_s, timeout_s)
    raise ValueError(f"unknown agent spec {spec!r}")

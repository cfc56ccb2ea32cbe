"""Adapter for agents served by an external process or HTTP endpoint.

Wire protocol: one JSON object per request, one JSON object per reply.

    {"type": "init", "session_id": ..., "plan": [...], "first_instruction": ..., "mode": ...}
    {"type": "ticks", "time_s": ..., "frame_refs": [...], "current_instruction": ...}
        -> {"events": [{"kind": ..., "text": ...}, ...]}
    {"type": "end"}

Over stdio each message and each reply is a single line.  Over HTTP each
message is POSTed to the endpoint URL and the response body is the reply.
Replies to ``init`` and ``end`` may carry no events.
"""

from __future__ import annotations

import json
import logging
import queue
import shlex
import subprocess
import threading
import urllib.error
import urllib.request
from typing import Sequence

from .agents import AGENT_KINDS, AgentEvent, AgentFailure, SessionInit, Tick

logger = logging.getLogger(__name__)

_EPS = 1e-9


class Timeout(AgentFailure):
    pass


class ProtocolError(AgentFailure):
    pass


class SubprocessTransport:
    """Line-delimited JSON over the stdin/stdout of a spawned command."""

    def __init__(self, argv: Sequence[str], timeout_s: float = 30.0):
        self.argv = list(argv)
        self.timeout_s = timeout_s
        self._proc: subprocess.Popen | None = None
        self._lines: queue.Queue = queue.Queue()

    def open(self) -> None:
        try:
            self._proc = subprocess.Popen(
                self.argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                text=True, encoding="utf-8", bufsize=1)
        except OSError as exc:
            raise AgentFailure(f"cannot start {self.argv[0]!r}: {exc}") from None
        threading.Thread(target=self._pump, args=(self._proc.stdout,), daemon=True).start()

    def _pump(self, stream) -> None:
        for line in stream:
            self._lines.put(line)
        self._lines.put(None)

    def exchange(self, message: dict) -> dict:
        if self._proc is None:
            self.open()
        try:
            self._proc.stdin.write(json.dumps(message) + "\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, ValueError) as exc:
            raise AgentFailure(f"agent process closed its input: {exc}") from None
        try:
            line = self._lines.get(timeout=self.timeout_s)
        except queue.Empty:
            raise Timeout(f"no reply within {self.timeout_s} s") from None
        if line is None:
            raise AgentFailure(f"agent process exited (status {self._proc.poll()})")
        return _decode(line)

    def close(self) -> None:
        if self._proc is None:
            return
        try:
            self._proc.stdin.close()
        except OSError:
            pass
        try:
            self._proc.wait(timeout=self.timeout_s)
        except subprocess.TimeoutExpired:
            self._proc.kill()
            self._proc.wait()
        self._proc = None


class HttpTransport:
    def __init__(self, url: str, timeout_s: float = 30.0):
        self.url = url
        self.timeout_s = timeout_s

    def open(self) -> None:
        pass

    def exchange(self, message: dict) -> dict:
        req = urllib.request.Request(
            self.url, data=json.dumps(message).encode("utf-8"),
            headers={"Content-Type": "application/json"}, method="POST")
        try:
            with urllib.request.urlopen(req, timeout=self.timeout_s) as resp:
                body = resp.read().decode("utf-8")
        except TimeoutError:
            raise Timeout(f"no reply from {self.url} within {self.timeout_s} s") from None
        except urllib.error.URLError as exc:
            if isinstance(exc.reason, TimeoutError):
                raise Timeout(f"no reply from {self.url} within {self.timeout_s} s") from None
            raise AgentFailure(f"request to {self.url} failed: {exc}") from None
        return _decode(body)

    def close(self) -> None:
        pass


def _decode(text: str) -> dict:
    try:
        reply = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ProtocolError(f"reply is not JSON: {exc}") from None
    if not isinstance(reply, dict):
        raise ProtocolError("reply must be a JSON object")
    return reply


def parse_events(reply: dict, time_s: float) -> list[AgentEvent]:
    raw = reply.get("events", [])
    if not isinstance(raw, list):
        raise ProtocolError("'events' must be a list")
    events = []
    for item in raw:
        if not isinstance(item, dict) or item.get("kind") not in AGENT_KINDS \
                or not isinstance(item.get("text"), str):
            raise ProtocolError(f"malformed event {item!r}")
        events.append(AgentEvent(time_s, item["kind"], item["text"]))
    return events


class RemoteAgent:
    """Batches ticks and contacts the endpoint every ``prompt_interval_s``.

    Frames since the previous contact are sent together; reply events are
    stamped with the contact time.  The first contact happens once
    ``prompt_interval_s`` has elapsed since the session start.
    """

    def __init__(self, transport, prompt_interval_s: float = 5.0):
        if prompt_interval_s <= 0:
            raise ValueError("prompt interval must be positive")
        self.transport = transport
        self.prompt_interval_s = prompt_interval_s
        self.exchanges = 0
        self._frames: list[str] = []
        self._next_contact = 0.0
        self._last_tick: float | None = None
        self._instruction = ""

    def start(self, init: SessionInit) -> None:
        self.transport.open()
        self._instruction = init.first_instruction
        self._next_contact = init.start_s + self.prompt_interval_s
        self.transport.exchange({
            "type": "init", "session_id": init.session_id, "plan": list(init.plan),
            "first_instruction": init.first_instruction, "mode": init.mode,
        })

    def _contact(self, time_s: float) -> list[AgentEvent]:
        reply = self.transport.exchange({
            "type": "ticks", "time_s": time_s, "frame_refs": self._frames,
            "current_instruction": self._instruction,
        })
        self.exchanges += 1
        self._frames = []
        events = parse_events(reply, time_s)
        for ev in events:
            if ev.kind == "instruction":
                self._instruction = ev.text
        return events

    def step(self, tick: Tick) -> list[AgentEvent]:
        self._frames.append(tick.frame_ref)
        self._last_tick = tick.time_s
        if tick.time_s + _EPS < self._next_contact:
            return []
        while self._next_contact <= tick.time_s + _EPS:
            self._next_contact += self.prompt_interval_s
        return self._contact(tick.time_s)

    def abort(self) -> None:
        self.transport.close()

    def close(self) -> list[AgentEvent]:
        try:
            events = self._contact(self._last_tick) if self._frames else []
            self.transport.exchange({"type": "end"})
        finally:
            self.transport.close()
        return events


def remote_agent(endpoint: str, prompt_interval_s: float = 5.0,
                 timeout_s: float = 30.0) -> RemoteAgent:
    """Agent for ``endpoint``: an http(s) URL or a command line to spawn."""
    if endpoint.startswith(("http://", "https://")):
        transport = HttpTransport(endpoint, timeout_s)
    else:
        transport = SubprocessTransport(shlex.split(endpoint), timeout_s)
    return RemoteAgent(transport, prompt_interval_s)

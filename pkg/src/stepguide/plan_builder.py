"""Step-by-step plans from timed action annotations and recipe graphs."""

from __future__ import annotations

import heapq
from dataclasses import dataclass
from typing import Iterable, Sequence

from .data_model import ActionSegment, RecipeGraph, VideoAnnotation


class PlanError(Exception):
    pass


class EmptyVideo(PlanError):
    pass


class CycleError(PlanError):
    pass


class UnsortableError(PlanError):
    pass


def _sentence(text: str) -> str:
    text = text.strip()
    return text if text.endswith((".", "!", "?")) else text + "."


def instruction_text(descriptions: Iterable[str]) -> str:
    """One instruction sentence carrying every description of a step."""
    return " ".join(_sentence(d) for d in descriptions)


@dataclass(frozen=True)
class PlanStep:
    descriptions: tuple[str, ...]
    action_ids: tuple[int | None, ...]
    step_refs: tuple[str | None, ...] = ()

    def __post_init__(self) -> None:
        if not self.descriptions:
            raise ValueError("plan step needs at least one description")
        if not self.step_refs:
            object.__setattr__(self, "step_refs", (None,) * len(self.descriptions))
        if not len(self.descriptions) == len(self.action_ids) == len(self.step_refs):
            raise ValueError("descriptions, action_ids and step_refs must have equal length")

    @property
    def instruction(self) -> str:
        return instruction_text(self.descriptions)

    @property
    def is_compound(self) -> bool:
        return len(self.descriptions) > 1


@dataclass(frozen=True)
class Plan:
    steps: tuple[PlanStep, ...]
    origin: str

    def __len__(self) -> int:
        return len(self.steps)

    @property
    def instructions(self) -> list[str]:
        return [s.instruction for s in self.steps]

    @property
    def action_ids(self) -> list[int]:
        return [aid for s in self.steps for aid in s.action_ids if aid is not None]


@dataclass(frozen=True)
class ActionGroup:
    """Actions of one main-set step with their overall time span."""

    step: PlanStep
    start_s: float
    end_s: float


@dataclass(frozen=True)
class ActionGroupSchedule:
    groups: tuple[ActionGroup, ...]


def sort_actions(actions: Iterable[ActionSegment]) -> list[ActionSegment]:
    """Start time ascending, then end time descending. Stable."""
    return sorted(actions, key=lambda a: (a.start_s, -a.end_s))


def group_compound(actions: Sequence[ActionSegment]) -> list[PlanStep]:
    """Group actions temporally contained (inclusive) in an earlier action.

    Input must already be ordered by ``sort_actions``; the first action of a
    group then spans every later member, so containment in it is enough.
    """
    groups: list[list[ActionSegment]] = []
    for a in actions:
        if groups:
            root = groups[-1][0]
            if root.start_s <= a.start_s and a.end_s <= root.end_s:
                groups[-1].append(a)
                continue
        groups.append([a])
    return [
        PlanStep(
            descriptions=tuple(a.description for a in g),
            action_ids=tuple(a.action_id for a in g),
            step_refs=tuple(a.step_ref for a in g),
        )
        for g in groups
    ]


def _schedule(steps: Sequence[PlanStep], video: VideoAnnotation) -> ActionGroupSchedule:
    groups = []
    for step in steps:
        acts = [video.action(aid) for aid in step.action_ids]
        groups.append(ActionGroup(step, min(a.start_s for a in acts), max(a.end_s for a in acts)))
    groups.sort(key=lambda g: g.start_s)
    return ActionGroupSchedule(tuple(groups))


def build_main_plan(video: VideoAnnotation) -> tuple[Plan, ActionGroupSchedule]:
    if not video.actions:
        raise EmptyVideo(f"video {video.video_id} has no actions")
    steps = group_compound(sort_actions(video.actions))
    return Plan(tuple(steps), "main"), _schedule(steps, video)


def kahn_topo_sort(graph: RecipeGraph, priority: Sequence[str]) -> list[str]:
    """Kahn's algorithm; among ready nodes, the one earliest in ``priority`` wins.

    Graph nodes absent from ``priority`` rank after it, in graph order.
    """
    nodes = graph.step_ids
    known = set(nodes)
    unknown = [p for p in priority if p not in known]
    if unknown:
        raise UnsortableError(f"steps not in recipe graph: {unknown}")
    rank: dict[str, int] = {}
    for sid in list(priority) + list(nodes):
        rank.setdefault(sid, len(rank))

    indegree = {sid: 0 for sid in nodes}
    children: dict[str, list[str]] = {sid: [] for sid in nodes}
    for u, v in graph.edges:
        children[u].append(v)
        indegree[v] += 1

    ready = [(rank[sid], sid) for sid in nodes if indegree[sid] == 0]
    heapq.heapify(ready)
    order = []
    while ready:
        _, sid = heapq.heappop(ready)
        order.append(sid)
        for child in children[sid]:
            indegree[child] -= 1
            if indegree[child] == 0:
                heapq.heappush(ready, (rank[child], child))
    if len(order) != len(nodes):
        stuck = sorted(sid for sid in nodes if indegree[sid] > 0)
        raise CycleError(f"recipe graph has a cycle through {stuck}")
    return order


def build_advanced_plan(video: VideoAnnotation) -> tuple[Plan, ActionGroupSchedule]:
    if not video.actions:
        raise EmptyVideo(f"video {video.video_id} has no actions")
    graph = video.recipe_graph
    if graph is None:
        raise UnsortableError(f"video {video.video_id} has no recipe graph")

    ordered = sort_actions(video.actions)
    main_steps = group_compound(ordered)
    known = set(graph.step_ids)
    by_ref: dict[str, ActionSegment] = {}
    for a in ordered:
        if a.step_ref is None or a.step_ref not in known:
            raise UnsortableError(
                f"action {a.action_id} ({a.step_ref!r}) is absent from the recipe graph")
        if a.step_ref in by_ref:
            raise UnsortableError(f"step {a.step_ref!r} is performed more than once")
        by_ref[a.step_ref] = a
    missing = [sid for sid in graph.step_ids if sid not in by_ref]
    order = kahn_topo_sort(graph, list(by_ref) + missing)

    compound_of: dict[int, frozenset] = {}
    for step in main_steps:
        if step.is_compound:
            key = frozenset(step.action_ids)
            for aid in step.action_ids:
                compound_of[aid] = key

    steps: list[PlanStep] = []
    i = 0
    while i < len(order):
        sid = order[i]
        action = by_ref.get(sid)
        if action is None:
            steps.append(PlanStep((graph.text(sid),), (None,), (sid,)))
            i += 1
            continue
        key = compound_of.get(action.action_id)
        if key is not None:
            window = order[i:i + len(key)]
            acts = [by_ref[s] for s in window if s in by_ref]
            if len(acts) == len(key) and {a.action_id for a in acts} == key:
                steps.append(PlanStep(
                    tuple(a.description for a in acts),
                    tuple(a.action_id for a in acts),
                    tuple(a.step_ref for a in acts),
                ))
                i += len(key)
                continue
        steps.append(PlanStep((action.description,), (action.action_id,), (sid,)))
        i += 1
    return Plan(tuple(steps), "advanced"), _schedule(main_steps, video)


def build_plan(video: VideoAnnotation) -> tuple[Plan, ActionGroupSchedule]:
    if video.set == "advanced":
        return build_advanced_plan(video)
    return build_main_plan(video)


def format_plan(plan: Plan) -> str:
    """Numbered steps; extra descriptions of compound steps are indented."""
    lines = []
    for n, step in enumerate(plan.steps, 1):
        first, *rest = step.descriptions
        suffix = "" if step.action_ids[0] is not None else "  (not performed)"
        lines.append(f"{n}. {first}{suffix}")
        for d in rest:
            lines.append(f"   - {d}")
    return "\n".join(lines) + "\n"

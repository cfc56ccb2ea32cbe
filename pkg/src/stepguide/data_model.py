"""Annotation schema, loading/validation, manifests and dataset statistics."""

from __future__ import annotations

import graphlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType
from typing import Any, Iterable, Mapping

logger = logging.getLogger(__name__)

MISTAKE_CATEGORIES = ("preparation", "technique", "measurement", "temperature", "timing")
SETS = ("main", "advanced")
SPLITS = ("train", "val", "test")

_TOP_REQUIRED = ("video_id", "recipe_id", "set", "split", "duration_s", "actions")
_TOP_OPTIONAL = ("recipe_graph", "replans", "feedback_texts")
_ACTION_REQUIRED = ("action_id", "description", "start_s", "end_s")
_ACTION_OPTIONAL = ("step_ref", "mistake")
_MISTAKE_KEYS = ("category", "description", "time_s")


class AnnotationError(Exception):
    """Base class for annotation problems.

    ``field`` and ``action_id`` locate the offending value when known.
    """

    def __init__(self, message: str, *, field: str | None = None, action_id: int | None = None):
        parts = [message]
        if field is not None:
            parts.append(f"field={field}")
        if action_id is not None:
            parts.append(f"action_id={action_id}")
        super().__init__("; ".join(parts))
        self.field = field
        self.action_id = action_id


class ParseError(AnnotationError):
    pass


class SchemaError(AnnotationError):
    pass


class InvariantError(AnnotationError):
    pass


@dataclass(frozen=True)
class MistakeAnnotation:
    category: str
    description: str
    time_s: float


@dataclass(frozen=True)
class ActionSegment:
    action_id: int
    description: str
    start_s: float
    end_s: float
    step_ref: str | None = None
    mistake: MistakeAnnotation | None = None


@dataclass(frozen=True)
class RecipeGraph:
    steps: tuple[tuple[str, str], ...]
    edges: tuple[tuple[str, str], ...] = ()

    @property
    def step_ids(self) -> tuple[str, ...]:
        return tuple(sid for sid, _ in self.steps)

    def text(self, step_id: str) -> str:
        for sid, text in self.steps:
            if sid == step_id:
                return text
        raise KeyError(step_id)

    def parents(self, step_id: str) -> list[str]:
        return [u for u, v in self.edges if v == step_id]

    def ancestors(self, step_id: str) -> set[str]:
        seen: set[str] = set()
        stack = self.parents(step_id)
        while stack:
            node = stack.pop()
            if node not in seen:
                seen.add(node)
                stack.extend(self.parents(node))
        return seen


@dataclass(frozen=True)
class ReplanAnnotation:
    after_action_id: int
    repeat_current: bool


@dataclass(frozen=True)
class VideoAnnotation:
    video_id: str
    recipe_id: str
    set: str
    split: str
    duration_s: float
    actions: tuple[ActionSegment, ...]
    recipe_graph: RecipeGraph | None = None
    replans: tuple[ReplanAnnotation, ...] = ()
    feedback_texts: Mapping[int, str] | None = None

    def action(self, action_id: int) -> ActionSegment:
        for a in self.actions:
            if a.action_id == action_id:
                return a
        raise KeyError(action_id)

    @property
    def mistakes(self) -> list[MistakeAnnotation]:
        return [a.mistake for a in self.actions if a.mistake is not None]


@dataclass(frozen=True)
class ManifestEntry:
    video_id: str
    set: str
    split: str
    path: Path


@dataclass(frozen=True)
class DatasetManifest:
    root: Path
    entries: tuple[ManifestEntry, ...] = ()

    def select(self, set_: str | None = None, split: str | None = None) -> list[ManifestEntry]:
        return [
            e
            for e in self.entries
            if (set_ is None or e.set == set_) and (split is None or e.split == split)
        ]


@dataclass(frozen=True)
class FileCheck:
    video_id: str
    path: Path
    ok: bool
    reason: str = ""


@dataclass(frozen=True)
class DatasetStats:
    set: str
    split: str
    hours: float
    videos: int
    instructions: int
    followed_success: int
    followed_mistake: int
    divergent_success: int
    divergent_mistake: int
    replans: int = 0
    per_video: tuple[tuple[str, int, int], ...] = field(default=(), repr=False)

    @property
    def instructions_per_replan(self) -> float | None:
        """Instructions per re-plan over the whole split (ratio of the totals)."""
        return self.instructions / self.replans if self.replans else None


# ---------------------------------------------------------------- parsing


def _number(value: Any, name: str, action_id: int | None = None) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SchemaError("expected a number", field=name, action_id=action_id)
    if not math.isfinite(value):
        raise InvariantError("must be finite", field=name, action_id=action_id)
    return float(value)


def _string(value: Any, name: str, action_id: int | None = None) -> str:
    if not isinstance(value, str):
        raise SchemaError("expected a string", field=name, action_id=action_id)
    return value


def _check_keys(obj: Any, required: Iterable[str], optional: Iterable[str], where: str,
                action_id: int | None = None) -> None:
    if not isinstance(obj, dict):
        raise SchemaError("expected an object", field=where, action_id=action_id)
    required = tuple(required)
    allowed = set(required) | set(optional)
    for key in required:
        if key not in obj:
            raise SchemaError("missing field", field=f"{where}.{key}" if where else key,
                              action_id=action_id)
    for key in obj:
        if key not in allowed:
            raise SchemaError("unexpected field", field=f"{where}.{key}" if where else key,
                              action_id=action_id)


def _parse_mistake(obj: Any, action_id: int) -> MistakeAnnotation | None:
    if obj is None:
        return None
    if isinstance(obj, list):
        raise SchemaError("at most one mistake per action", field="mistake", action_id=action_id)
    _check_keys(obj, _MISTAKE_KEYS, (), "mistake", action_id)
    category = _string(obj["category"], "mistake.category", action_id)
    if category not in MISTAKE_CATEGORIES:
        raise InvariantError(f"unknown category {category!r}", field="mistake.category",
                             action_id=action_id)
    return MistakeAnnotation(
        category=category,
        description=_string(obj["description"], "mistake.description", action_id),
        time_s=_number(obj["time_s"], "mistake.time_s", action_id),
    )


def _parse_action(obj: Any, index: int) -> ActionSegment:
    if not isinstance(obj, dict):
        raise SchemaError("expected an object", field=f"actions[{index}]")
    raw_id = obj.get("action_id")
    if isinstance(raw_id, bool) or not isinstance(raw_id, int):
        raise SchemaError("expected an integer", field=f"actions[{index}].action_id")
    _check_keys(obj, _ACTION_REQUIRED, _ACTION_OPTIONAL, "", raw_id)
    step_ref = obj.get("step_ref")
    if step_ref is not None:
        step_ref = _string(step_ref, "step_ref", raw_id)
    return ActionSegment(
        action_id=raw_id,
        description=_string(obj["description"], "description", raw_id),
        start_s=_number(obj["start_s"], "start_s", raw_id),
        end_s=_number(obj["end_s"], "end_s", raw_id),
        step_ref=step_ref,
        mistake=_parse_mistake(obj.get("mistake"), raw_id),
    )


def _parse_graph(obj: Any) -> RecipeGraph | None:
    if obj is None:
        return None
    _check_keys(obj, ("steps",), ("edges",), "recipe_graph")
    steps = []
    for i, s in enumerate(obj["steps"]):
        _check_keys(s, ("step_id", "text"), (), f"recipe_graph.steps[{i}]")
        steps.append((_string(s["step_id"], "recipe_graph.step_id"),
                      _string(s["text"], "recipe_graph.text")))
    edges = []
    for i, e in enumerate(obj.get("edges") or []):
        if not (isinstance(e, list) and len(e) == 2 and all(isinstance(x, str) for x in e)):
            raise SchemaError("edge must be [from, to]", field=f"recipe_graph.edges[{i}]")
        edges.append((e[0], e[1]))
    return RecipeGraph(steps=tuple(steps), edges=tuple(edges))


def _parse_replans(obj: Any) -> tuple[ReplanAnnotation, ...]:
    if obj is None:
        return ()
    if not isinstance(obj, list):
        raise SchemaError("expected a list", field="replans")
    out = []
    for i, r in enumerate(obj):
        _check_keys(r, ("after_action_id", "repeat_current"), (), f"replans[{i}]")
        aid, rep = r["after_action_id"], r["repeat_current"]
        if isinstance(aid, bool) or not isinstance(aid, int):
            raise SchemaError("expected an integer", field=f"replans[{i}].after_action_id")
        if not isinstance(rep, bool):
            raise SchemaError("expected a boolean", field=f"replans[{i}].repeat_current")
        out.append(ReplanAnnotation(aid, rep))
    return tuple(out)


def _parse_feedback(obj: Any) -> Mapping[int, str] | None:
    if obj is None:
        return None
    if not isinstance(obj, dict):
        raise SchemaError("expected an object", field="feedback_texts")
    out = {}
    for key, text in obj.items():
        try:
            aid = int(key)
        except ValueError:
            raise SchemaError("keys must be action ids", field=f"feedback_texts.{key}") from None
        out[aid] = _string(text, f"feedback_texts.{key}", aid)
    return MappingProxyType(out)


def validate_video(video: VideoAnnotation) -> None:
    """Raise InvariantError if any type invariant of ``video`` is violated."""
    if video.set not in SETS:
        raise InvariantError(f"set must be one of {SETS}", field="set")
    if video.split not in SPLITS:
        raise InvariantError(f"split must be one of {SPLITS}", field="split")
    if video.duration_s <= 0:
        raise InvariantError("duration must be positive", field="duration_s")
    if not video.actions:
        raise InvariantError("video has no actions", field="actions")
    seen: set[int] = set()
    for a in video.actions:
        if a.action_id in seen:
            raise InvariantError("duplicate action_id", field="action_id", action_id=a.action_id)
        seen.add(a.action_id)
        if not 0 <= a.start_s < a.end_s <= video.duration_s:
            raise InvariantError("need 0 <= start_s < end_s <= duration_s", field="start_s/end_s",
                                 action_id=a.action_id)
        if a.mistake is not None and not a.start_s <= a.mistake.time_s <= a.end_s:
            raise InvariantError("mistake time outside action span", field="mistake.time_s",
                                 action_id=a.action_id)

    graph = video.recipe_graph
    if graph is not None:
        ids = graph.step_ids
        if len(set(ids)) != len(ids):
            raise InvariantError("duplicate step_id", field="recipe_graph.steps")
        known = set(ids)
        for u, v in graph.edges:
            if u not in known or v not in known:
                raise InvariantError(f"edge ({u}, {v}) references unknown step",
                                     field="recipe_graph.edges")
        sorter = graphlib.TopologicalSorter({sid: set() for sid in ids})
        for u, v in graph.edges:
            sorter.add(v, u)
        try:
            sorter.prepare()
        except graphlib.CycleError as exc:
            raise InvariantError(f"recipe graph has a cycle: {exc.args[1]}",
                                 field="recipe_graph.edges") from None

    if video.set == "advanced":
        if graph is None:
            raise InvariantError("advanced videos need a recipe graph", field="recipe_graph")
        known = set(graph.step_ids)
        for a in video.actions:
            if a.step_ref is None or a.step_ref not in known:
                raise InvariantError(f"step_ref {a.step_ref!r} not in recipe graph",
                                     field="step_ref", action_id=a.action_id)
    elif video.replans:
        raise InvariantError("replans are only allowed in the advanced set", field="replans")

    for r in video.replans:
        if r.after_action_id not in seen:
            raise InvariantError("replan references unknown action", field="replans.after_action_id",
                                 action_id=r.after_action_id)
    for aid in video.feedback_texts or {}:
        if aid not in seen:
            raise InvariantError("feedback text for unknown action", field="feedback_texts",
                                 action_id=aid)


def video_from_dict(doc: Any) -> VideoAnnotation:
    _check_keys(doc, _TOP_REQUIRED, _TOP_OPTIONAL, "")
    actions = doc["actions"]
    if not isinstance(actions, list):
        raise SchemaError("expected a list", field="actions")
    video = VideoAnnotation(
        video_id=_string(doc["video_id"], "video_id"),
        recipe_id=_string(doc["recipe_id"], "recipe_id"),
        set=_string(doc["set"], "set"),
        split=_string(doc["split"], "split"),
        duration_s=_number(doc["duration_s"], "duration_s"),
        actions=tuple(_parse_action(a, i) for i, a in enumerate(actions)),
        recipe_graph=_parse_graph(doc.get("recipe_graph")),
        replans=_parse_replans(doc.get("replans")),
        feedback_texts=_parse_feedback(doc.get("feedback_texts")),
    )
    validate_video(video)
    return video


def loads_annotation(text: str) -> VideoAnnotation:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed JSON: {exc}") from None
    return video_from_dict(doc)


def load_annotations(path: str | Path) -> VideoAnnotation:
    """Load and fully validate one per-video annotation file."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise ParseError(f"{path}: not UTF-8 ({exc})") from None
    return loads_annotation(text)


def video_to_dict(video: VideoAnnotation) -> dict:
    def action(a: ActionSegment) -> dict:
        mistake = None
        if a.mistake is not None:
            mistake = {"category": a.mistake.category, "description": a.mistake.description,
                       "time_s": a.mistake.time_s}
        return {"action_id": a.action_id, "step_ref": a.step_ref, "description": a.description,
                "start_s": a.start_s, "end_s": a.end_s, "mistake": mistake}

    graph = None
    if video.recipe_graph is not None:
        graph = {"steps": [{"step_id": s, "text": t} for s, t in video.recipe_graph.steps],
                 "edges": [list(e) for e in video.recipe_graph.edges]}
    feedback = None
    if video.feedback_texts is not None:
        feedback = {str(k): v for k, v in sorted(video.feedback_texts.items())}
    return {
        "video_id": video.video_id,
        "recipe_id": video.recipe_id,
        "set": video.set,
        "split": video.split,
        "duration_s": video.duration_s,
        "actions": [action(a) for a in video.actions],
        "recipe_graph": graph,
        "replans": [{"after_action_id": r.after_action_id, "repeat_current": r.repeat_current}
                    for r in video.replans],
        "feedback_texts": feedback,
    }


def dumps_annotation(video: VideoAnnotation) -> str:
    return json.dumps(video_to_dict(video), indent=2, ensure_ascii=False) + "\n"


# ---------------------------------------------------------------- manifests


def load_manifest(path: str | Path) -> DatasetManifest:
    """Read a tab-separated ``video_id set split path`` manifest.

    Relative file paths resolve against the manifest's directory.
    """
    path = Path(path)
    root = path.parent
    entries = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        cols = line.split("\t")
        if len(cols) != 4:
            raise ParseError(f"{path}:{lineno}: expected 4 tab-separated columns, got {len(cols)}")
        vid, set_, split, rel = cols
        entries.append(ManifestEntry(vid, set_, split, root / rel))
    return DatasetManifest(root=root, entries=tuple(entries))


def check_entry(entry: ManifestEntry) -> VideoAnnotation:
    video = load_annotations(entry.path)
    for name in ("video_id", "set", "split"):
        if getattr(video, name) != getattr(entry, name):
            raise InvariantError(
                f"manifest says {getattr(entry, name)!r}, file says {getattr(video, name)!r}",
                field=name)
    return video


def validate_manifest(manifest: DatasetManifest) -> list[FileCheck]:
    """Load every entry and collect all failures, not just the first."""
    if not Path(manifest.root).is_dir():
        raise FileNotFoundError(f"manifest root {manifest.root} is not a readable directory")
    report = []
    for entry in manifest.entries:
        try:
            check_entry(entry)
        except (AnnotationError, OSError) as exc:
            logger.debug("validation failed for %s: %s", entry.path, exc)
            report.append(FileCheck(entry.video_id, entry.path, False, f"{type(exc).__name__}: {exc}"))
        else:
            report.append(FileCheck(entry.video_id, entry.path, True))
    return report


def dataset_stats(manifest: DatasetManifest, set_: str, split: str) -> DatasetStats:
    """Count instructions and feedback classes in the ground-truth transcripts."""
    from .plan_builder import build_plan
    from .transcript import generate_transcript

    hours = 0.0
    counts = dict(instructions=0, followed_success=0, followed_mistake=0,
                  divergent_success=0, divergent_mistake=0, replans=0)
    per_video = []
    entries = manifest.select(set_, split)
    for entry in entries:
        video = check_entry(entry)
        hours += video.duration_s / 3600
        tr = generate_transcript(video, build_plan(video))
        n_instr = 0
        for ev in tr.events:
            if ev.kind == "instruction":
                n_instr += 1
            elif ev.kind in ("success", "mistake"):
                has_mistake = video.action(ev.action_id).mistake is not None
                key = ("divergent_" if ev.divergent else "followed_") + (
                    "mistake" if has_mistake else "success")
                counts[key] += 1
        counts["instructions"] += n_instr
        counts["replans"] += tr.replan_count
        per_video.append((video.video_id, n_instr, tr.replan_count))
    return DatasetStats(set=set_, split=split, hours=hours, videos=len(entries),
                        per_video=tuple(per_video), **counts)

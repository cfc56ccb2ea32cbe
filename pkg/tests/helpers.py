"""Small builders for synthetic annotation documents."""

from __future__ import annotations

import json
from pathlib import Path

from stepguide.data_model import video_from_dict


def action(aid, description, start, end, step_ref=None, mistake=None):
    return {"action_id": aid, "description": description, "start_s": start, "end_s": end,
            "step_ref": step_ref, "mistake": mistake}


def mistake(time_s, description="That went wrong.", category="technique"):
    return {"category": category, "description": description, "time_s": time_s}


def doc(video_id="v1", actions=None, set_="main", split="test", duration=100.0, **extra):
    if actions is None:
        actions = [action(1, "Chop the onion", 10.0, 30.0),
                   action(2, "Heat the pan", 35.0, 50.0),
                   action(3, "Fry the onion", 55.0, 80.0)]
    d = {"video_id": video_id, "recipe_id": "r1", "set": set_, "split": split,
         "duration_s": duration, "actions": actions}
    d.update(extra)
    return d


def video(**kwargs):
    return video_from_dict(doc(**kwargs))


def write_dataset(root: Path, docs) -> Path:
    """Write annotation files plus a manifest; returns the manifest path."""
    root.mkdir(parents=True, exist_ok=True)
    lines = []
    for d in docs:
        (root / f"{d['video_id']}.json").write_text(json.dumps(d), encoding="utf-8")
        lines.append(f"{d['video_id']}\t{d['set']}\t{d['split']}\t{d['video_id']}.json")
    manifest = root / "manifest.tsv"
    manifest.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return manifest

"""Evaluation engine for step-by-step task guidance agents.

Builds plans and timed ground-truth instruction/feedback transcripts from
annotated cooking videos, drives agents over the recording tick by tick,
and scores instruction completion and mistake alerts.
"""

from importlib import resources
from pathlib import Path

from .agents import AgentEvent, SessionInit, Tick
from .data_model import VideoAnnotation, load_annotations, load_manifest
from .evaluator import EvalReport, MatchWindow, evaluate_streaming, evaluate_turn_based
from .plan_builder import build_plan
from .transcript import generate_transcript

__all__ = [
    "AgentEvent", "EvalReport", "MatchWindow", "SessionInit", "Tick", "VideoAnnotation",
    "build_plan", "evaluate_streaming", "evaluate_turn_based", "fixture_manifest",
    "generate_transcript", "load_annotations", "load_manifest",
]


def fixture_manifest() -> Path:
    """Path of the manifest for the bundled synthetic videos."""
    return Path(str(resources.files(__package__) / "fixtures" / "manifest.tsv"))

"""Command-line entry point: ``stepguide <command> ...``.

Exit status is 0 on success, 1 when annotations fail validation and 2 when
an agent session fails (timeout, protocol error, crashed server).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Sequence

from .agents import DEFAULT_FPS, parse_agent_spec
from .data_model import (
    AnnotationError,
    check_entry,
    dataset_stats,
    load_annotations,
    load_manifest,
    validate_manifest,
)
from .evaluator import (
    EvalReport,
    MatchWindow,
    aggregate_report,
    evaluate_streaming,
    evaluate_turn_based,
    report_from_dict,
    session_log_dict,
)
from .plan_builder import PlanError, build_plan, format_plan
from .transcript import TranscriptError, dumps_events, generate_transcript

logger = logging.getLogger("stepguide")

EXIT_OK, EXIT_INVALID, EXIT_AGENT = 0, 1, 2


@dataclasses.dataclass(frozen=True)
class RunConfig:
    manifest: Path
    set: str | None
    split: str | None
    agent: str
    window_s: float = 30.0
    fps: float = DEFAULT_FPS
    prompt_interval_s: float = 5.0
    timeout_s: float = 30.0
    mode: str = "stream"
    out: Path | None = None
    jobs: int = 1

    def __post_init__(self) -> None:
        if not self.window_s > 0:
            raise ValueError("--window must be positive")
        if not self.fps > 0:
            raise ValueError("--fps must be positive")
        if not self.prompt_interval_s > 0:
            raise ValueError("--prompt-interval must be positive")
        if self.jobs < 1:
            raise ValueError("--jobs must be at least 1")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["manifest"] = str(self.manifest)
        d["out"] = None if self.out is None else str(self.out)
        del d["jobs"]  # does not affect results
        return d


def _fmt(x: float | None) -> str:
    return "-" if x is None else f"{x:.3f}"


def format_table(report: EvalReport) -> str:
    rows = [("video", "IC-Acc", "Prec.", "Rec.", "F1", "ROUGE-L", "")]
    for v in report.per_video:
        single = aggregate_report([v])
        rows.append((v.video_id, _fmt(single.ic_acc), _fmt(single.precision), _fmt(single.recall),
                     _fmt(single.f1), _fmt(single.rouge_l_mean), "FAILED" if v.failure else ""))
    rows.append(("all", _fmt(report.ic_acc), _fmt(report.precision), _fmt(report.recall),
                 _fmt(report.f1), _fmt(report.rouge_l_mean), ""))
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    lines = []
    for n, row in enumerate(rows):
        cells = [row[0].ljust(widths[0])] + [c.rjust(w) for c, w in zip(row[1:-1], widths[1:-1])]
        lines.append("  ".join(cells + [row[-1]]).rstrip())
        if n == 0 or n == len(rows) - 2:
            lines.append("-" * len(lines[0]))
    return "\n".join(lines) + "\n"


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


# ---------------------------------------------------------------- commands


def cmd_validate(args: argparse.Namespace) -> int:
    try:
        manifest = load_manifest(args.manifest)
        report = validate_manifest(manifest)
    except (AnnotationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    bad = [c for c in report if not c.ok]
    for c in report:
        print(f"{'ok  ' if c.ok else 'FAIL'} {c.video_id}  {c.path}" + (f"  {c.reason}" if c.reason else ""))
    print(f"{len(report) - len(bad)}/{len(report)} files valid")
    return EXIT_INVALID if bad else EXIT_OK


def _load_video(path: str, set_: str | None = None):
    video = load_annotations(path)
    if set_ is not None and set_ != video.set:
        video = dataclasses.replace(video, set=set_)
    return video


def cmd_plan(args: argparse.Namespace) -> int:
    try:
        video = _load_video(args.video, args.set)
        plan, _ = build_plan(video)
    except (AnnotationError, PlanError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    sys.stdout.write(format_plan(plan))
    return EXIT_OK


def cmd_transcript(args: argparse.Namespace) -> int:
    try:
        video = _load_video(args.video, args.set)
        transcript = generate_transcript(video, build_plan(video))
    except (AnnotationError, PlanError, TranscriptError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    text = dumps_events(transcript.events)
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _prepare(config: RunConfig):
    manifest = load_manifest(config.manifest)
    prepared = []
    for entry in manifest.select(config.set, config.split):
        video = check_entry(entry)
        prepared.append((video, generate_transcript(video, build_plan(video))))
    return prepared


def run_eval(config: RunConfig):
    """Evaluate every selected video; results come back in manifest order."""
    prepared = _prepare(config)
    factory = parse_agent_spec(config.agent, config.prompt_interval_s, config.timeout_s)
    window = MatchWindow(config.window_s)

    def one(item):
        video, transcript = item
        logger.info("evaluating %s", video.video_id)
        if config.mode == "turn":
            return evaluate_turn_based(video, transcript, factory, window, config.fps)
        return evaluate_streaming(video, transcript, factory(transcript), window, config.fps)

    if config.jobs == 1:
        results = [one(item) for item in prepared]
    else:
        with ThreadPoolExecutor(max_workers=config.jobs) as pool:
            results = list(pool.map(one, prepared))
    return aggregate_report(results)


def write_results(report: EvalReport, config: RunConfig) -> None:
    out = config.out
    out.mkdir(parents=True, exist_ok=True)
    for v in report.per_video:
        (out / f"{v.video_id}.log.json").write_text(_dump(session_log_dict(v)), encoding="utf-8")
    (out / "report.json").write_text(_dump(dict(report.to_dict(), config=config.to_dict())),
                                     encoding="utf-8")


def cmd_eval(args: argparse.Namespace) -> int:
    try:
        config = RunConfig(Path(args.manifest), args.set, args.split, args.agent, args.window,
                           args.fps, args.prompt_interval, args.timeout, args.mode,
                           Path(args.out) if args.out else None, args.jobs)
        parse_agent_spec(config.agent)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    try:
        report = run_eval(config)
    except (AnnotationError, PlanError, TranscriptError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    if config.out is not None:
        write_results(report, config)
    sys.stdout.write(format_table(report))
    for v in report.failures:
        print(f"agent failure on {v.video_id}: {v.failure}", file=sys.stderr)
    return EXIT_AGENT if report.failures else EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    path = Path(args.results)
    if path.is_dir():
        path = path / "report.json"
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    if args.format == "structured":
        sys.stdout.write(_dump(data))
    else:
        sys.stdout.write(format_table(report_from_dict(data)))
    return EXIT_OK


def cmd_stats(args: argparse.Namespace) -> int:
    try:
        stats = dataset_stats(load_manifest(args.manifest), args.set, args.split)
    except (AnnotationError, PlanError, TranscriptError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    rows = [
        ("videos", stats.videos), ("hours", f"{stats.hours:.2f}"),
        ("instructions", stats.instructions),
        ("followed / success", stats.followed_success),
        ("followed / mistake", stats.followed_mistake),
        ("divergent / success", stats.divergent_success),
        ("divergent / mistake", stats.divergent_mistake),
        ("re-plans", stats.replans),
    ]
    per_replan = stats.instructions_per_replan
    if per_replan is not None:
        rows.append(("instructions per re-plan", f"{per_replan:.2f}"))
    print(f"{stats.set}/{stats.split}")
    for name, value in rows:
        print(f"  {name:<26}{value}")
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stepguide", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check every annotation file in a manifest")
    p.add_argument("manifest")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("plan", help="print the plan for one annotation file")
    p.add_argument("video")
    p.add_argument("--set", choices=("main", "advanced"), help="override the file's set")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("transcript", help="write the ground-truth transcript as JSON lines")
    p.add_argument("video")
    p.add_argument("--set", choices=("main", "advanced"), help="override the file's set")
    p.add_argument("-o", "--output", help="output file (default: stdout)")
    p.set_defaults(func=cmd_transcript)

    p = sub.add_parser("eval", help="run an agent over a manifest and score it")
    p.add_argument("manifest")
    p.add_argument("--set", choices=("main", "advanced"))
    p.add_argument("--split")
    p.add_argument("--agent", default="oracle",
                   help="oracle | silent | alarmist | lagged:<seconds> | remote:<endpoint>")
    p.add_argument("--mode", choices=("stream", "turn"), default="stream")
    p.add_argument("--window", type=float, default=30.0, help="match window width in seconds")
    p.add_argument("--fps", type=float, default=DEFAULT_FPS)
    p.add_argument("--prompt-interval", type=float, default=5.0,
                   help="seconds between remote agent contacts")
    p.add_argument("--timeout", type=float, default=30.0, help="per-exchange remote timeout")
    p.add_argument("--out", help="directory for per-video logs and report.json")
    p.add_argument("--jobs", type=int, default=1, help="videos evaluated in parallel")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="print a saved report")
    p.add_argument("results", help="results directory or report.json")
    p.add_argument("--format", choices=("table", "structured"), default="table")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("stats", help="dataset statistics for one set and split")
    p.add_argument("manifest")
    p.add_argument("--set", choices=("main", "advanced"), required=True)
    p.add_argument("--split", required=True)
    p.set_defaults(func=cmd_stats)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())

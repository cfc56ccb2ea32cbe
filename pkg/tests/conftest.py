from __future__ import annotations

import sys
from pathlib import Path

import pytest

from stepguide import fixture_manifest
from stepguide.data_model import check_entry, load_manifest
from stepguide.plan_builder import build_plan
from stepguide.transcript import generate_transcript

TESTS = Path(__file__).parent
sys.path.insert(0, str(TESTS))


@pytest.fixture(scope="session")
def manifest():
    return load_manifest(fixture_manifest())


@pytest.fixture(scope="session")
def suite(manifest):
    """(video, transcript) for every bundled fixture, in manifest order."""
    out = []
    for entry in manifest.entries:
        video = check_entry(entry)
        out.append((video, generate_transcript(video, build_plan(video))))
    return out


@pytest.fixture(scope="session")
def by_id(suite):
    return {video.video_id: (video, tr) for video, tr in suite}


# ------------------------------------------------------- acceptance summary
# Tests marked ``criterion(n)`` contribute one PASS/FAIL/SKIP line each.

_criteria: dict[int, str] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    n = marker.args[0]
    if report.skipped:
        _criteria.setdefault(n, "SKIP")
    elif report.failed:
        _criteria[n] = "FAIL"
    elif report.when == "call":
        _criteria.setdefault(n, "PASS")


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        terminalreporter.write_line(f"criterion {n}: {_criteria[n]}")

import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

from lod2kit.config import PipelineConfig  # noqa: E402
from lod2kit.fixtures import ARCHETYPES, FixtureSpec  # noqa: E402
from lod2kit.pipeline import fixture_job, run_pipeline  # noqa: E402


@pytest.fixture(scope="session")
def fixture_runs():
    """The 32 archetype x noise x rotation runs, with debug data and wall-clock seconds."""
    import time

    cfg = PipelineConfig()
    out = {}
    t0 = time.perf_counter()
    for arch in ARCHETYPES:
        for noise in (0.0, 0.03):
            for rot in (0.0, 17.0):
                spec = FixtureSpec(arch, noise=noise, rotation=rot, seed=1)
                out[(arch, noise, rot)] = run_pipeline(fixture_job(spec, cfg), keep_debug=True)
    out["seconds"] = time.perf_counter() - t0
    return out


ACCEPTANCE_LINES = []


def record_criterion(n, ok, detail):
    line = f"criterion {str(n):>3}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)

import sys
from pathlib import Path

import pytest

# make the shared oracles importable as a plain module
sys.path.insert(0, str(Path(__file__).parent))

_ACCEPTANCE = pytest.StashKey[dict]()


@pytest.fixture
def acceptance(request):
    """``acceptance(n, ok, detail)`` records one criterion line for the summary."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, {})

    def record(n, ok, detail=""):
        line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}".rstrip()
        lines[n] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])

from __future__ import annotations

import pytest

_LINES = pytest.StashKey[list]()


@pytest.fixture
def report(request, capsys):
    """Record (and echo) one verdict line for the end-of-run summary."""
    lines = request.config.stash.setdefault(_LINES, [])

    def emit(tag: str, ok: bool, detail: str = ""):
        line = f"{tag}: {'PASS' if ok else 'FAIL'}" + (f"  {detail}" if detail else "")
        lines.append(line)
        with capsys.disabled():
            print("\n" + line)
        return ok

    return emit


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=_criterion_order):
            terminalreporter.write_line(line)


def _criterion_order(line: str):
    head = line.split(":", 1)[0].split()[-1]
    num = "".join(c for c in head if c.isdigit())
    return (int(num) if num else 0, head)

import sys
from pathlib import Path

import pytest

# make the oracle helpers importable as a plain module
sys.path.insert(0, str(Path(__file__).parent))

_ACCEPTANCE = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    detail = dict(item.user_properties).get("detail", "")
    if rep.when == "call" or (rep.when == "setup" and rep.skipped):
        status = "SKIP" if rep.skipped else ("PASS" if rep.passed else "FAIL")
        _ACCEPTANCE.append((marker.args[0], status, rep.duration, detail))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, status, secs, detail in _ACCEPTANCE:
        line = f"{status:4s}  {name:<28s} {secs:7.1f}s"
        terminalreporter.write_line(f"{line}  {detail}" if detail else line)

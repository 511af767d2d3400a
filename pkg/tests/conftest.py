import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

_RESULTS: list[tuple[str, str, bool, str]] = []


def record(criterion: str, label: str, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'} [{criterion}] {label}: {detail}"
    print(line)
    _RESULTS.append((criterion, label, ok, detail))


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for criterion, label, ok, detail in _RESULTS:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} [{criterion}] {label}: {detail}")

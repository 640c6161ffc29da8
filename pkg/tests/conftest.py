"""Shared test plumbing: the acceptance suite records one pass/fail line per
criterion and this hook prints them in the terminal summary so they appear
in the captured pytest output."""

CRITERION_RESULTS = []


def record_criterion(name, ok, detail=""):
    """Record and immediately assert an acceptance criterion."""
    line = f"[{'PASS' if ok else 'FAIL'}] {name}" + (f" — {detail}" if detail else "")
    CRITERION_RESULTS.append(line)
    assert ok, line
    return ok


def pytest_terminal_summary(terminalreporter):
    if not CRITERION_RESULTS:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for line in CRITERION_RESULTS:
        terminalreporter.write_line(line)

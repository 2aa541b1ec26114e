"""Collects the acceptance summary lines and prints them at the end of the run."""

ACCEPTANCE_LINES: dict[str, str] = {}


def record(criterion, ok: bool, detail: str):
    line = f"criterion {criterion}: {'PASS' if ok else 'FAIL'} - {detail}"
    ACCEPTANCE_LINES[str(criterion)] = line
    print(line)


def _order(key: str):
    num = "".join(ch for ch in key if ch.isdigit())
    return int(num), key


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES, key=_order):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])

"""Shared pytest plumbing.

Acceptance tests record one "[AC-NN] PASS/FAIL ..." line each; the terminal
summary replays them after the run so the verdicts stay visible without -s.
"""

ACCEPTANCE_LINES: list[str] = []


def record_verdict(line: str) -> None:
    ACCEPTANCE_LINES.append(line)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

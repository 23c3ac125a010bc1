"""Shared pytest hooks: acceptance verdicts are echoed in the terminal summary."""

VERDICTS: list[str] = []


def record(line: str) -> None:
    VERDICTS.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance verdicts")
        for line in sorted(VERDICTS, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)

import pytest

_LINES: dict[str, str] = {}
_INFO: list[str] = []


class AcceptanceLog:
    def criterion(self, key: str, ok: bool, detail: str):
        _LINES[key] = f"{'PASS' if ok else 'FAIL'}  criterion {key}: {detail}"
        return ok

    def info(self, text: str):
        _INFO.append(f"INFO  {text}")


@pytest.fixture(scope="session")
def acceptance():
    return AcceptanceLog()


def pytest_terminal_summary(terminalreporter):
    if not _LINES and not _INFO:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_LINES, key=lambda k: (int("".join(c for c in k if c.isdigit()) or 0), k)):
        terminalreporter.write_line(_LINES[key])
    for line in _INFO:
        terminalreporter.write_line(line)

import pytest

# criterion number -> list of (part, status, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, list[tuple[str, str, str]]] = {}


class Recorder:
    def __call__(self, criterion: int, part: str, ok: bool | None, detail: str = "") -> None:
        status = "SKIP" if ok is None else ("PASS" if ok else "FAIL")
        ACCEPTANCE.setdefault(criterion, []).append((part, status, detail))
        print(f"criterion {criterion} [{part}]: {status} {detail}")


@pytest.fixture(scope="session")
def record():
    return Recorder()


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for c in sorted(ACCEPTANCE):
        parts = ACCEPTANCE[c]
        statuses = {s for _, s, _ in parts}
        overall = "FAIL" if "FAIL" in statuses else ("PASS" if "PASS" in statuses else "SKIP")
        tr.write_line(f"criterion {c}: {overall}")
        for part, status, detail in parts:
            tr.write_line(f"    {part}: {status} {detail}")

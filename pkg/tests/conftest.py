import pytest

# criterion number -> list of (passed, detail); filled by the acceptance suite
ACCEPTANCE: dict = {}


def _status(passed):
    return "SKIP" if passed is None else "PASS" if passed else "FAIL"


def record(criterion, passed, detail=""):
    """``passed=None`` marks a criterion that could not run here."""
    ACCEPTANCE.setdefault(criterion, []).append((passed, detail))
    print(f"criterion {criterion}: {_status(passed)} {detail}".rstrip())


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for criterion in sorted(ACCEPTANCE, key=lambda c: (int(str(c).rstrip("ab")), str(c))):
        parts = ACCEPTANCE[criterion]
        flags = [ok for ok, _ in parts]
        status = _status(None if None in flags else all(flags))
        details = "; ".join(d for _, d in parts if d)
        terminalreporter.write_line(f"criterion {criterion}: {status}  {details}")


@pytest.fixture
def record_criterion():
    return record

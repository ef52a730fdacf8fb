import pytest

N_CRITERIA = 13


def pytest_configure(config):
    config._acceptance = {}


@pytest.fixture
def verdict(request):
    """Record one acceptance line and fail the test when any check is false."""
    table = request.config._acceptance

    def _record(number: int, title: str, checks: dict, detail: str = ""):
        ok = all(bool(v) for v in checks.values())
        failed = [k for k, v in checks.items() if not v]
        line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}"
        if detail:
            line += f"  [{detail}]"
        if failed:
            line += f"  failed: {', '.join(failed)}"
        table[number] = line
        print(line)
        assert ok, line

    return _record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    table = getattr(config, "_acceptance", {})
    if not table:
        return
    errored = {r.nodeid for key in ("failed", "error") for r in terminalreporter.stats.get(key, [])}
    terminalreporter.section("acceptance criteria")
    for n in range(1, N_CRITERIA + 1):
        if n in table:
            terminalreporter.write_line(table[n])
        elif any(f"test_c{n:02d}_" in node for node in errored):
            terminalreporter.write_line(f"criterion {n:2d} FAIL  raised before reaching its checks")
        else:
            terminalreporter.write_line(f"criterion {n:2d} NOT RUN")

import pytest

_verdicts = []


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running acceptance checks (minutes to an hour)")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call" and item.module.__name__.endswith("test_acceptance"):
        detail = dict(item.user_properties).get("verdict", str(call.excinfo.value) if call.excinfo else "")
        _verdicts.append((item.name, rep.outcome, detail))


def pytest_terminal_summary(terminalreporter):
    if not _verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome, detail in _verdicts:
        n = int(name.split("_")[2])
        mark = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"criterion {n:2d}: {mark}  {detail.splitlines()[0] if detail else ''}")

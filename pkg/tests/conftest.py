import pytest

_RESULTS = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(label): acceptance criterion reported in the summary")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    label = mark.args[0]
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        result = "xfail" if hasattr(rep, "wasxfail") and rep.outcome == "skipped" else rep.outcome
        _RESULTS[item.nodeid] = (label, result)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for label, outcome in _RESULTS.values():
        status = {"passed": "PASS", "xfail": "FAIL (expected, documented)"}.get(outcome, "FAIL")
        terminalreporter.write_line(f"{status}  {label}")

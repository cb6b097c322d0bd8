"""Collects the outcome of tests marked ``criterion`` and prints one line per
acceptance criterion at the end of the session."""
import pytest

_results = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by this test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or not (rep.when == "call" or rep.failed or rep.skipped):
        return
    number, title = mark.args
    entry = _results.setdefault(number, {"title": title, "ok": True, "details": []})
    entry["ok"] &= rep.passed
    for key, value in item.user_properties:
        if key == "detail":
            entry["details"].append(value)


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for number in sorted(_results):
        e = _results[number]
        status = "PASS" if e["ok"] else "FAIL"
        tr.write_line(f"[{status}] {number:>2}. {e['title']}")
        for d in e["details"]:
            tr.write_line(f"          {d}")

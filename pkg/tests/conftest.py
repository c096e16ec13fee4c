import pytest
from hypothesis import settings

settings.register_profile("ci", max_examples=200, deadline=None)
settings.register_profile("fast", max_examples=20, deadline=None)
settings.load_profile("ci")

_acceptance = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    number = marker.args[0]
    failed = report.failed or (report.when == "call" and report.skipped)
    ok, names = _acceptance.get(number, (True, []))
    if report.when == "call" or failed:
        _acceptance[number] = (ok and not failed, names + [item.name] if report.when == "call" else names)


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_acceptance):
        ok, names = _acceptance[number]
        terminalreporter.write_line(f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  ({', '.join(names)})")

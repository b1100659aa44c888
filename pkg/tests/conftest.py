import pytest


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        detail = "; ".join(f"{k}={v}" for k, v in item.user_properties)
        if hasattr(rep, "wasxfail"):
            status = "FAIL (expected, tracked)"
        else:
            status = "PASS" if rep.passed else "FAIL"
        item.config._criterion_lines = getattr(item.config, "_criterion_lines", {})
        item.config._criterion_lines[marker.args[0]] = f"[criterion {marker.args[0]}] {status} {detail}".rstrip()


def pytest_terminal_summary(terminalreporter, config):
    lines = getattr(config, "_criterion_lines", {})
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(lines):
        terminalreporter.write_line(lines[n])

import numpy as np
import pytest

_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def pytest_configure(config):
    config.stash[_ACCEPTANCE] = []
    config.addinivalue_line("markers", "acceptance(label): end-to-end acceptance check")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or report.when not in ("setup", "call"):
        return
    if report.when == "setup" and report.passed:
        return
    detail = dict(item.user_properties).get("detail", "")
    if report.failed and not detail:
        detail = report.longrepr.reprcrash.message if hasattr(report.longrepr, "reprcrash") else ""
    item.config.stash[_ACCEPTANCE].append(
        (marker.args[0], "PASS" if report.passed else "FAIL", detail))


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash[_ACCEPTANCE]
    if not lines:
        return
    terminalreporter.section("acceptance")
    for label, status, detail in lines:
        terminalreporter.write_line(f"{status}  {label}: {detail}".rstrip(": "))

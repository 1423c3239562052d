import pytest

from fairstop.gen import random_corpus

_CRITERIA: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by a test")


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("criterion")
    if marker is None or call.when != "call":
        return
    number, title = marker.args
    entry = _CRITERIA.setdefault(number, {"title": title, "ok": True, "tests": 0})
    entry["tests"] += 1
    if call.excinfo is not None:
        entry["ok"] = False


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        entry = _CRITERIA[number]
        verdict = "PASS" if entry["ok"] else "FAIL"
        terminalreporter.write_line(
            f"criterion {number}: {verdict}  {entry['title']} ({entry['tests']} tests)"
        )


@pytest.fixture(scope="session")
def corpus():
    return random_corpus(100, seed=0)

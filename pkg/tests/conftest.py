import shutil
from pathlib import Path

import pytest

from dyadex.gateway import Gateway, MockBackend, QueryLedger, ResponseCache

HERE = Path(__file__).parent
FIXTURE = Path(__file__).parents[1] / "src" / "dyadex" / "data" / "fixture"
GOLDEN = HERE / "golden"
DATA = HERE / "data"


def make_gateway(rules, cache_dir=None):
    """Gateway over a scripted backend with no retry delays."""
    if isinstance(rules, str):
        rules = [{"pattern": ".", "response": rules}]
    return Gateway(MockBackend(rules), ResponseCache(cache_dir), QueryLedger(), sleep=lambda s: None)


@pytest.fixture
def fixture_dir(tmp_path):
    """A writable copy of the bundled mock fixture."""
    dst = tmp_path / "fixture"
    shutil.copytree(FIXTURE, dst, ignore=shutil.ignore_patterns("out", "cache", "lexicons"))
    return dst


# ------------------------------------------------------- acceptance reporting

_CRITERIA: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion a test belongs to")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    entry = _CRITERIA.setdefault(number, {"title": title, "status": "PASS"})
    if rep.failed:
        entry["status"] = "FAIL"
    elif rep.skipped and entry["status"] == "PASS":
        entry["status"] = "SKIP"


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        entry = _CRITERIA[number]
        terminalreporter.write_line(f"{entry['status']:4}  criterion {number:2}: {entry['title']}")

import os

import pytest

CRITERIA = ["A1", "A2", "A3", "A4", "A5", "A6", "A7", "B8", "B9", "B10", "B11", "B12", "B13"]
_RANK = {"PASS": 0, "SKIP": 1, "FAIL": 2}
_results: dict[str, tuple[str, list[str]]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(id): acceptance criterion checked by this test")
    config.addinivalue_line("markers", "experiment: multi-seed training runs (skipped when SIGENT_ACCEPTANCE_QUICK=1)")


def pytest_collection_modifyitems(config, items):
    if os.environ.get("SIGENT_ACCEPTANCE_QUICK") != "1":
        return
    skip = pytest.mark.skip(reason="SIGENT_ACCEPTANCE_QUICK=1")
    for item in items:
        if item.get_closest_marker("experiment"):
            item.add_marker(skip)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or not (rep.when == "call" or rep.failed or rep.skipped):
        return
    state = "SKIP" if rep.skipped else "FAIL" if rep.failed else "PASS"
    cid = marker.args[0]
    old_state, details = _results.get(cid, ("PASS", []))
    details += [str(v) for k, v in item.user_properties if k == "detail"]
    _results[cid] = (max(old_state, state, key=_RANK.get), details)


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for cid in CRITERIA:
        if cid in _results:
            state, details = _results[cid]
            text = "; ".join(dict.fromkeys(details))
            terminalreporter.write_line(f"{cid:<4} {state}  {text}".rstrip())

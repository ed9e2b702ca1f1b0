"""Collects one PASS/FAIL line per acceptance criterion for the terminal summary."""

_RESULTS = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number n")


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    n, title = marker.args
    failed = call.excinfo is not None and call.when in ("setup", "call")
    prev = _RESULTS.get(n)
    if call.when == "setup" or prev is None:
        _RESULTS[n] = [title, not failed, ""]
    elif failed:
        _RESULTS[n][1] = False
    if call.when == "call":
        detail = "; ".join(f"{k}={v}" for k, v in item.user_properties)
        if failed:
            detail = (detail + "; " if detail else "") + call.excinfo.exconly().splitlines()[0][:200]
        _RESULTS[n][2] = detail


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(_RESULTS):
        title, ok, detail = _RESULTS[n]
        tr.write_line(f"[{'PASS' if ok else 'FAIL'}] {n:2d}. {title}" + (f" ({detail})" if detail else ""))

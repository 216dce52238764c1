"""Acceptance bookkeeping: tests marked `criterion(n)` feed a one-line-per-criterion summary."""
import pytest

TITLES = {
    1: "identity suite",
    2: "block moments and zero means",
    3: "disjoint supports",
    4: "exponent reproduction",
    5: "defect equation of one step",
    6: "schedule arithmetic and margin log",
    7: "weak L1 versus distributions",
    8: "Hardy scaling law",
    9: "branching from a common past",
}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): test belongs to acceptance criterion n")
    config._criteria = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        ok = rep.passed and not hasattr(rep, "wasxfail")
        detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
        if hasattr(rep, "wasxfail"):
            detail = (detail + "; " if detail else "") + "known failure: " + rep.wasxfail
        item.config._criteria.setdefault(mark.args[0], []).append((item.name, ok, detail))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    res = config._criteria
    if not res:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(TITLES):
        if n not in res:
            continue
        ok = all(r[1] for r in res[n])
        tr.write_line(f"criterion {n} {'PASS' if ok else 'FAIL'}: {TITLES[n]}")
        for name, good, detail in res[n]:
            tr.write_line(f"    {'ok  ' if good else 'FAIL'} {name}" + (f": {detail}" if detail else ""))

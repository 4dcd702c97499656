import pytest

# criterion id -> (description, passed, detail)
_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(id, description): acceptance criterion checked by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when not in ("setup", "call"):
        return
    if rep.when == "setup" and rep.passed:
        return
    cid, desc = mark.args
    detail = ""
    if rep.failed:
        crash = getattr(rep.longrepr, "reprcrash", None)
        detail = (crash.message if crash else str(rep.longrepr)).splitlines()[0]
    elif rep.skipped:
        detail = "skipped"
    extra = dict(item.user_properties).get("summary", "")
    if rep.passed and extra:
        detail = extra
    _CRITERIA[cid] = (desc, rep.passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for cid, (desc, ok, detail) in sorted(_CRITERIA.items()):
        line = f"{'PASS' if ok else 'FAIL'}  {cid:<3} {desc}"
        if detail:
            line += f"  [{detail}]"
        tr.write_line(line)
    n_ok = sum(ok for _, ok, _ in _CRITERIA.values())
    tr.write_line(f"{n_ok}/{len(_CRITERIA)} criteria pass")

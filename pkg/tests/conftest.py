from collections import OrderedDict

ACCEPTANCE: "OrderedDict[int, list]" = OrderedDict()


def record(number: int, title: str, ok: bool, detail: str = "") -> None:
    """Collect one check of an acceptance criterion; a criterion passes only if all its checks do."""
    entry = ACCEPTANCE.setdefault(number, [title, True, []])
    entry[1] = entry[1] and ok
    if detail:
        entry[2].append(("ok " if ok else "FAILED ") + detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        title, ok, details = ACCEPTANCE[n]
        tr.write_line(f"AC{n:02d} {'PASS' if ok else 'FAIL'}  {title}")
        for d in details:
            tr.write_line(f"       {d}")

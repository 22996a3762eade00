"""Prints one PASS/FAIL line per acceptance criterion at the end of a run."""
import re

_NAME = re.compile(r"test_acceptance\.py::test_a(\d)_")


def pytest_terminal_summary(terminalreporter):
    results, notes = {}, {}
    for reports in terminalreporter.stats.values():
        for rep in reports:
            m = _NAME.search(getattr(rep, "nodeid", ""))
            if m is None or getattr(rep, "when", None) not in ("setup", "call"):
                continue
            if rep.when == "setup" and rep.passed:
                continue
            crit = "A" + m.group(1)
            results.setdefault(crit, []).append(rep.passed)
            notes.setdefault(crit, []).extend(v for k, v in rep.user_properties if k == "note")
    if not results:
        return
    terminalreporter.section("acceptance")
    for crit in sorted(results):
        oks = results[crit]
        line = f"{crit} {'PASS' if all(oks) else 'FAIL'} ({sum(oks)}/{len(oks)} checks)"
        if notes[crit]:
            line += "  " + "; ".join(notes[crit])
        terminalreporter.write_line(line)

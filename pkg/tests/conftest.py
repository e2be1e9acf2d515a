"""Prints the acceptance summary: one PASS/FAIL line per criterion."""


def pytest_terminal_summary(terminalreporter):
    lines = []
    for outcome in ("passed", "failed"):
        for rep in terminalreporter.stats.get(outcome, []):
            if rep.when != "call":
                continue
            props = dict(rep.user_properties)
            if "criterion" in props:
                tag = "PASS" if rep.passed else "FAIL"
                lines.append((rep.nodeid, f"{tag}  {props['criterion']}  [{props.get('measured', '')}]"))
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, text in sorted(lines):
            terminalreporter.write_line(text)

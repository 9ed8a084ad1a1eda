"""Collects acceptance results and prints one line per criterion at the end of the run."""

ACCEPTANCE = {}


def record(number, name, ok, detail):
    """Store one clause of an acceptance criterion and echo it."""
    ACCEPTANCE.setdefault(number, (name, []))[1].append((bool(ok), detail))
    print(f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {name}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        name, clauses = ACCEPTANCE[number]
        ok = all(c[0] for c in clauses)
        detail = "; ".join(c[1] for c in clauses)
        terminalreporter.write_line(f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {name}: {detail}")

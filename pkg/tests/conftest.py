import math

import pytest

from ionlogic.dynamics import gate_drive
from ionlogic.sequences import Register, calibrate_G


@pytest.fixture(scope="session")
def g_drive():
    """Drive whose Ramsey-wrapped action is diag(1, i, i, 1)."""
    return gate_drive(dphi_m=math.pi)


@pytest.fixture(scope="session")
def register():
    return Register(path=(1.0, 2.0))


@pytest.fixture(scope="session")
def g_cal(register, g_drive):
    return calibrate_G(register, g_drive)


def pytest_terminal_summary(terminalreporter):
    rows = []
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            props = dict(getattr(rep, "user_properties", ()))
            if "criterion" in props and rep.when == "call":
                rows.append((props["criterion"], "PASS" if outcome == "passed" else "FAIL",
                             props.get("title", ""), props.get("measured", "")))
    if not rows:
        return
    terminalreporter.section("acceptance criteria")
    for num, verdict, title, measured in sorted(rows):
        line = f"criterion {num:>2}: {verdict}  {title}"
        terminalreporter.write_line(line + (f"  [{measured}]" if measured else ""))

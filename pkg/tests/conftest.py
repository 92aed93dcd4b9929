from pathlib import Path

import pytest

from flatnf.diffgeo import Distribution, VectorField
from flatnf.symkernel import Expr, parse, substitute
from flatnf.sysfile import load_system

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"


def span(chart, gens):
    """Distribution from generators written as {coordinate name: expression}."""
    by_name = {c.name: c for c in chart.coords}
    # coefficients on X+ are written with the plain state names
    plain = {c.minus() if c.kind == "shifted-state" else c: c for c in chart.coords}
    back = {p: Expr.var(c) for p, c in plain.items()}

    def coeff(text):
        return substitute(parse(text, list(plain)), back)

    fields = []
    for g in gens:
        fields.append(VectorField(chart, {by_name[k]: coeff(e) for k, e in g.items()}))
    return Distribution(chart, fields)


@pytest.fixture
def fixture_path():
    return lambda name: str(FIXTURES / name)


@pytest.fixture
def s30():
    return load_system(FIXTURES / "s30.sys")


@pytest.fixture
def s5():
    return load_system(FIXTURES / "s5.sys")


# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])

import pytest

from gridremedy.caseio import load_builtin_case
from gridremedy.model import Generator, Grid, Line, Load, Substation


@pytest.fixture(scope="session")
def case30():
    return load_builtin_case("case30")


@pytest.fixture(scope="session")
def case118():
    return load_builtin_case("case118")


def two_bus_grid(load_mw=100.0, load_mvar=20.0, rating=150.0):
    return Grid(
        substations=(Substation("S1"), Substation("S2")),
        lines=(Line("L1", "S1", "S2", r=0.01, x=0.1, b=0.0, rating=rating),),
        generators=(
            Generator("G1", "S1", p_set=0.0, v_set=1.0, q_min=-100, q_max=100,
                      p_max=300, slack=True),
        ),
        loads=(Load("C1", "S2", p=load_mw, q=load_mvar),),
    )


@pytest.fixture
def two_bus():
    return two_bus_grid()

import numpy as np
import pytest
from hypothesis import strategies as st

from stochtransport.model import MaterialModel, PhaseSpaceGrid, PopulationState

_ACCEPTANCE = {}


def record_criterion(number, passed, detail):
    _ACCEPTANCE[number] = (passed, detail)
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
    print(line)
    return line


@pytest.fixture
def criterion():
    return record_criterion


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        passed, detail = _ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")


def small_model(I=1, L=1, G=1, sigma_t=1.0, sigma_c=0.1, scatter=0.0, speed=1.0, source=0.0, x_max=1.0, E_max=1.0):
    grid = PhaseSpaceGrid(I=I, L=L, G=G, x_max=x_max, E_max=E_max)
    mat = MaterialModel.isotropic(grid, sigma_t, sigma_c, scatter, speed, source)
    return grid, mat


@st.composite
def random_models(draw, max_packets=6):
    """Small one-cell-or-more models with random cross sections and counts."""
    I = draw(st.integers(1, 2))
    L = draw(st.sampled_from([1, 2]))
    G = draw(st.integers(1, 2))
    if I * L * G > max_packets:
        G = 1
    grid = PhaseSpaceGrid(I=I, L=L, G=G, x_max=1.0, E_max=float(G))
    rate = st.one_of(st.just(0.0), st.floats(1e-3, 2.0))
    sc = np.array(draw(st.lists(rate, min_size=G, max_size=G)))
    S = np.array(draw(st.lists(rate, min_size=G * G, max_size=G * G))).reshape(G, G)
    st_ = sc + S.sum(axis=1) + draw(st.floats(0.0, 1.0))
    speed = np.array(draw(st.lists(st.floats(0.5, 2.0), min_size=G, max_size=G)))
    src = draw(st.floats(0.0, 3.0))
    mat = MaterialModel.isotropic(grid, st_, sc, S, speed, src)
    n = np.array(draw(st.lists(st.floats(0.0, 50.0), min_size=grid.n_packets, max_size=grid.n_packets)))
    return grid, mat, PopulationState(n.reshape(grid.shape))

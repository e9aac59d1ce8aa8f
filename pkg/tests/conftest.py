import numpy as np
import pytest

from darcychannel.geometry import DomainSpec, InterfaceChart


def _vec(f):
    return lambda x: np.asarray(f(np.asarray(x, dtype=float)), dtype=float)


@pytest.fixture
def flat_chart():
    return InterfaceChart.flat(0.0, 1.0)


@pytest.fixture
def linear_chart():
    return InterfaceChart(
        0.0, 1.0, _vec(lambda x: x), _vec(np.ones_like), _vec(np.zeros_like)
    )


@pytest.fixture
def curved_chart():
    return InterfaceChart(
        0.0,
        1.0,
        _vec(lambda x: 0.1 * np.sin(2 * np.pi * x)),
        _vec(lambda x: 0.2 * np.pi * np.cos(2 * np.pi * x)),
        _vec(lambda x: -0.4 * np.pi**2 * np.sin(2 * np.pi * x)),
    )


@pytest.fixture
def parabola_chart():
    return InterfaceChart(
        0.0, 1.0, _vec(lambda x: 0.5 * x**2), _vec(lambda x: x), _vec(np.ones_like)
    )


def make_mesh(chart, n_t=6, n_z=4, n_1=3, depth=1.0):
    from darcychannel.discretization.meshing import build_mesh

    return build_mesh(DomainSpec(chart=chart, omega1_depth=depth), n_t, n_z, n_1)

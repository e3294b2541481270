import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from hybridtw import insert_fault
from hybridtw.errors import ModelError
from hybridtw.junctions import (NodeCoefficients, fault_coefficients, fault_factor, fault_factor_log_derivative,
                                junction_coefficients)

adm = st.floats(1e-5, 10.0)


@given(y0=adm, others=st.lists(adm, max_size=5))
def test_transmission_is_one_plus_reflection(y0, others):
    c = junction_coefficients(y0, others)
    assert abs(c.T - (1 + c.K)) <= 1e-12
    assert -1 <= c.K <= 1


@given(y0=adm, y1=adm)
def test_two_branch_power_balance(y0, y1):
    c = junction_coefficients(y0, [y1])
    assert math.isclose(y0 * (1 - c.K ** 2), y1 * c.T ** 2, rel_tol=1e-9)


@given(zs=st.floats(1.0, 500.0), r=st.floats(0.0, 1e4))
def test_fault_coefficients(zs, r):
    c = fault_coefficients(zs, r)
    assert abs(c.T - (1 + c.K)) <= 1e-12
    assert -1 <= c.K < 0 and 0 <= c.T < 1


@given(zs=st.floats(1.0, 500.0), r=st.floats(0.05, 1e3), mk=st.integers(0, 4), mt=st.integers(0, 4))
def test_fault_log_derivative_matches_differences(zs, r, mk, mt):
    h = 1e-6 * r
    fd = (math.log(abs(fault_factor(zs, r + h, mk, mt))) - math.log(abs(fault_factor(zs, r - h, mk, mt)))) / (2 * h)
    assert fault_factor_log_derivative(zs, r, mk, mt) == pytest.approx(fd, rel=1e-5, abs=1e-9 / r)


def test_bolted_fault_reflects_fully():
    c = fault_coefficients(100.0, 0.0)
    assert c.K == -1 and c.T == 0
    with pytest.raises(ModelError):
        fault_factor_log_derivative(100.0, 0.0, 0, 0)


def test_open_end_and_singular_node():
    c = junction_coefficients(0.01, [])
    assert c.K == 1 and c.T == 2
    with pytest.raises(ModelError):
        junction_coefficients(0.0, [0.0])


def test_node_coefficients_on_grid(grid):
    fg, _ = insert_fault(grid, "e67", 50.0, 10.0)
    s = np.array([0.0, 1j * 2e3, 1j * 2e5])
    nc = NodeCoefficients(fg, s)
    y_ohl, y_cab = nc.admittance("e15"), nc.admittance("e56")
    K = nc.reflection("e15", "q5")  # OHL into cable: cable admittance is much larger
    assert np.allclose(K, (y_ohl - y_cab) / (y_ohl + y_cab))
    assert np.all(np.real(K) < -0.5)
    # station: open circuit at DC, the capacitor shorts out at high frequency
    K1 = nc.reflection("e15", "q1")
    assert np.real(K1[0]) == pytest.approx((y_ohl - nc.admittance("e12") - nc.admittance("e13"))
                                           / (y_ohl + nc.admittance("e12") + nc.admittance("e13")))
    assert np.allclose(nc.transmission("e15", "q5"), 1 + K)
    with pytest.raises(ModelError):
        nc.pair("e67/q6", "qf")

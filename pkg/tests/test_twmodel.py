import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hybridtw import build_grid, insert_fault, simulate_node
from hybridtw.errors import ModelError
from hybridtw.paths import PathBudget, enumerate_paths
from hybridtw.twmodel import (FrequencyGrid, StepResponseTable, WaveModel, coefficient_kernel, impulse_response,
                              interpolate_step, ramp_synthesis, step_sensitivity, surrogate_step, surrogate_table)

FS = 1e6


def test_surrogate_step_shape():
    u = surrogate_step(50.0, 8e-8, 1.0, 256, FS)
    assert u[0] == 0 and np.all(np.diff(u) >= 0) and u[-1] == pytest.approx(1.0, abs=1e-12)
    ideal = surrogate_step(0.0, 8e-8, 1.0, 8, FS)
    assert list(ideal) == [0, 1, 1, 1, 1, 1, 1, 1]
    assert impulse_response(u, FS).sum() == pytest.approx((u[-1] - u[0]) * FS)


TABLE = surrogate_table("ohl", 8e-8, 1.0, [0, 10, 40, 100], 64, FS)


@given(d=st.floats(0.0, 100.0))
def test_interpolation_is_bracketed_and_linear(d):
    u = interpolate_step(TABLE, d)
    i = min(int(np.searchsorted(TABLE.distances, d, side="right")) - 1, TABLE.distances.size - 2)
    lo, hi = TABLE.responses[0, i], TABLE.responses[0, i + 1]
    assert np.all(u >= np.minimum(lo, hi) - 1e-15) and np.all(u <= np.maximum(lo, hi) + 1e-15)
    h = 1e-4
    if TABLE.distances[i] + h < d < TABLE.distances[i + 1] - h:
        fd = (interpolate_step(TABLE, d + h) - interpolate_step(TABLE, d - h)) / (2 * h)
        assert np.allclose(step_sensitivity(TABLE, d), fd, atol=1e-9)


def test_interpolation_exact_at_knots_and_bounded():
    for k, d in enumerate(TABLE.distances):
        assert np.array_equal(interpolate_step(TABLE, d), TABLE.responses[0, k])
    with pytest.raises(ModelError) as exc:
        interpolate_step(TABLE, 150.0)
    assert exc.value.code == "extrapolation-refused"


def test_resistivity_axis_is_interpolated_first():
    r = np.stack([TABLE.responses[0], 0.5 * TABLE.responses[0]])
    t = StepResponseTable("ohl", TABLE.distances, r, FS, np.array([10.0, 100.0]))
    assert np.allclose(interpolate_step(t, 40.0, 55.0), 0.75 * interpolate_step(TABLE, 40.0))
    with pytest.raises(ModelError):
        interpolate_step(t, 40.0)


def test_bad_tables():
    with pytest.raises(ModelError):
        StepResponseTable("ohl", np.array([0.0, 0.0]), np.zeros((2, 4)), FS)
    with pytest.raises(ModelError):
        StepResponseTable("ohl", np.array([0.0, 1.0]), np.zeros((3, 4)), FS)


def test_frequency_grid():
    g = FrequencyGrid.for_window(300, FS)
    assert g.n_fft == 2048 and g.n_bins == 1025
    assert g.require(600) is g and g.require(5000).n_fft == 16384
    with pytest.raises(ModelError):
        FrequencyGrid(1000, FS)


@given(pos=st.floats(0.6, 40.0))
def test_ramp_synthesis_position_derivative(pos):
    kern = np.exp(-np.arange(64) / 7.0)
    y = ramp_synthesis(kern, pos)
    assert y.sum() > 0 and np.all(y[: max(0, math.floor(pos - 0.5) + 1)] == 0)
    h = 1e-6
    q = pos - 0.5
    if abs(q - round(q)) > 2 * h:
        fd = (ramp_synthesis(kern, pos + h) - ramp_synthesis(kern, pos - h)) / (2 * h)
        k0 = math.floor(q) + 1
        ref = np.zeros(64)
        ref[k0:] = -kern[: 64 - k0]
        assert np.allclose(fd, ref, atol=1e-6)


def test_ramp_synthesis_integer_arrival_is_a_shift():
    kern = np.array([1.0, 0.5, 0.25, 0.0, 0.0, 0.0])
    assert np.allclose(ramp_synthesis(kern, 1.5), [0, 0, 1.0, 1.5, 1.75, 1.75])
    assert np.allclose(ramp_synthesis(kern, 2.0), [0, 0, 0.5, 1.25, 1.625, 1.75])
    with pytest.raises(ModelError):
        ramp_synthesis(kern, -3.0)


def test_coefficient_kernel_first_order():
    g = FrequencyGrid.for_window(512, FS)
    a = 2e4
    c = a / (g.s_damped + a)
    kern = coefficient_kernel(c, 512, g)
    # running sums follow the continuous step response; tap 0 holds half a sample
    k = np.arange(256)
    assert np.max(np.abs(np.cumsum(kern)[:256] - (1 - np.exp(-a * (k + 0.5) / FS)))) < 2e-3
    assert np.array_equal(coefficient_kernel(0.5, 4, g), [0.5, 0, 0, 0])


LOSSLESS_A = dict(kind="ohl", R=0.0, L=1e-3, C=1e-8)
LOSSLESS_B = dict(kind="ohl", R=0.0, L=0.5e-3, C=2e-8)


def _stub_grid():
    return build_grid(dict(
        nodes=[dict(id="q1"), dict(id="q2"), dict(id="q3")],
        edges=[dict(id="e12", nodes=["q1", "q2"], length=100.0, segment_class="a"),
               dict(id="e13", nodes=["q1", "q3"], length=1000.0, segment_class="b")],
        segment_classes=dict(a=LOSSLESS_A, b=LOSSLESS_B)))


def test_relay_current_sign_and_ratio():
    fg, p = insert_fault(_stub_grid(), "e12", 30.0, 10.0, 0.0, 1.0)
    c = 1 / math.sqrt(1e-3 * 1e-8)
    n = int(FS * 80 / c)  # before the first reflection comes back
    w = simulate_node(fg, p, "q1", (0.0, n / FS), FS, relay_edge="e12", amplitude_threshold=0.0)
    y_b = 1 / math.sqrt(0.5e-3 / 2e-8)
    live = np.abs(w.v) > 0
    assert live.any() and np.all(w.v[live] < 0)
    # bus current into the faulted line equals what the healthy branch supplies
    assert np.allclose(w.i[live], -y_b * w.v[live], rtol=1e-9)


@settings(max_examples=15, deadline=None)
@given(v_bf=st.floats(1e3, 5e5), r=st.floats(0.5, 300.0))
def test_waveforms_scale_with_prefault_voltage(grid, v_bf, r):
    fg, p = insert_fault(grid, "e67", 45.0, r, 50e-6, 1.0)
    w1 = simulate_node(fg, p, "q1", (0.0, 8e-4), FS, relay_edge="e15")
    w2 = simulate_node(fg, p.replace(V_bf=v_bf), "q1", (0.0, 8e-4), FS, relay_edge="e15")
    assert np.allclose(w2.v, v_bf * w1.v, rtol=1e-12, atol=1e-12 * v_bf)
    assert np.allclose(w2.i, v_bf * w1.i, rtol=1e-12, atol=1e-12 * v_bf)


def test_evaluate_jacobian_fixed_fault_time(grid):
    fg, _ = insert_fault(grid, "e67", 45.0, 20.0)
    paths = enumerate_paths(fg, "qf", "q1", PathBudget(n_max=12), 45.0)
    m = WaveModel(fg, paths, "q1", FS, 700, "e15")
    d, r, h = 37.3, 20.0, 1e-4
    out = m.evaluate(d, r, 1.0, 10.0, jacobian=True)
    for grad, arg in ((out.dv_dd, "d"), (out.dv_dr, "r")):
        dp = dict(d=(h, 0), r=(0, h * r))[arg]
        vp = m.evaluate(d + dp[0], r + dp[1], 1.0, 10.0).v
        vm = m.evaluate(d - dp[0], r - dp[1], 1.0, 10.0).v
        fd = (vp - vm) / (2 * sum(dp))
        assert np.max(np.abs(grad - fd)) <= 1e-4 * np.max(np.abs(fd))


def test_prune_keeps_strong_paths(grid):
    fg, _ = insert_fault(grid, "e56", 5.0, 0.1)
    paths = enumerate_paths(fg, "qf", "q1", PathBudget(n_max=30), 5.0)
    m = WaveModel(fg, paths, "q1", FS, 32, "e15")
    amp = m.amplitudes(0.1)
    m.prune(0.1, 0.01)
    assert len(m.paths) == int(np.sum(amp >= 0.01 * amp.max()))
    assert m.BV.shape[0] == len(m.paths)

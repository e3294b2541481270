import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hybridtw import insert_fault
from hybridtw.errors import ModelError
from hybridtw.paths import PathBudget, SimpleTopology, enumerate_paths, make_path
from hybridtw.twmodel import DcGainBound, WaveModel
from paths_oracle import brute_force_walks, random_connected_graph


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), n=st.integers(2, 6), budget=st.integers(1, 8))
def test_enumeration_equals_brute_force(seed, n, budget):
    rng = np.random.default_rng(seed)
    edges = random_connected_graph(rng, n)
    src, dst = (f"n{k}" for k in rng.choice(n, 2, replace=False))
    got = [p.nodes for p in enumerate_paths(SimpleTopology(edges), src, dst, PathBudget(tau_max=budget))]
    assert sorted(got) == sorted(brute_force_walks(edges, src, dst, budget))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), k=st.integers(1, 15))
def test_n_max_is_prefix_of_delay_order(seed, k):
    rng = np.random.default_rng(seed)
    edges = random_connected_graph(rng, 5, max_delay=3)
    topo = SimpleTopology(edges)
    full = enumerate_paths(topo, "n0", "n4", PathBudget(tau_max=12))
    first = enumerate_paths(topo, "n0", "n4", PathBudget(n_max=k))
    keys = [(p.delay(), p.nodes) for p in full]
    assert keys == sorted(keys)
    if len(full) >= k:
        assert [p.nodes for p in first] == [p.nodes for p in full[:k]]


def test_ties_break_on_node_sequence():
    topo = SimpleTopology({"ab": ("a", "b", 1), "ac": ("a", "c", 1), "bd": ("b", "d", 1), "cd": ("c", "d", 1)})
    paths = enumerate_paths(topo, "a", "d", PathBudget(n_max=2))
    assert [p.nodes for p in paths] == [("a", "b", "d"), ("a", "c", "d")]


@given(frac=st.floats(0.05, 0.95))
def test_delay_is_affine_in_distance(grid, frac):
    fg, _ = insert_fault(grid, "e67", 40.0, 1.0)
    d = frac * fg.length
    for p in enumerate_paths(fg, "qf", "q1", PathBudget(n_max=8), 40.0):
        assert p.delay(d) == pytest.approx(p.delay(40.0) + p.delay_slope * (d - 40.0), rel=1e-12)


def test_fault_bounce_counts(grid):
    fg, _ = insert_fault(grid, "e67", 40.0, 1.0)
    p = make_path(fg, ("qf", "q6", "qf", "q7", "qf", "q6", "q5", "q1"))
    assert (p.m_near, p.m_far) == (3, 2)
    assert (p.fault_reflections, p.fault_transmissions) == (0, 2)
    p = make_path(fg, ("qf", "q6", "qf", "q6", "q5", "q1"))
    assert (p.m_near, p.m_far, p.fault_reflections, p.fault_transmissions) == (3, 0, 1, 0)


def test_first_path_is_direct(grid):
    fg, _ = insert_fault(grid, "e67", 40.0, 1.0)
    p = enumerate_paths(fg, "qf", "q1", PathBudget(n_max=1), 40.0)[0]
    assert p.nodes == ("qf", "q6", "q5", "q1")
    c_o, c_c = grid.segment("e67").speed, grid.segment("e56").speed
    assert p.delay(40.0) == pytest.approx(40 / c_o + 20 / c_c + 120 / c_o, rel=1e-12)


def test_budget_and_explosion_errors(grid):
    with pytest.raises(ModelError):
        PathBudget()
    with pytest.raises(ModelError):
        PathBudget(tau_max=1.0, n_max=2)
    with pytest.raises(ModelError):
        PathBudget(tau_max=-1.0)
    fg, _ = insert_fault(grid, "e56", 10.0, 1.0)
    with pytest.raises(ModelError) as exc:
        enumerate_paths(fg, "qf", "q1", PathBudget(tau_max=2e-3), 10.0, max_expansions=100)
    assert exc.value.code == "path-explosion"


@pytest.mark.parametrize("edge,d", [("e67", 50.0), ("e56", 5.0), ("e15", 30.0)])
def test_gain_bound_never_drops_a_strong_path(grid, edge, d):
    fg, _ = insert_fault(grid, edge, d, 1.0)
    first = enumerate_paths(fg, "qf", "q1", PathBudget(n_max=1), d)
    tau = first[0].delay(d) + 250e-6
    full = enumerate_paths(fg, "qf", "q1", PathBudget(tau_max=tau), d)
    bound = DcGainBound(fg, "q1", 0.0)
    floor = 1e-3 * bound.gain(first[0])
    bound.floor = floor
    pruned = enumerate_paths(fg, "qf", "q1", PathBudget(tau_max=tau), d, gain=bound)
    kept = {p.nodes for p in pruned}
    # the bound is exact on completed paths, so no path at or above the floor is lost
    assert {p.nodes for p in full if bound.gain(p) >= floor} <= kept
    m = WaveModel(fg, full, "q1", 1e6, 16, "e15")
    assert np.all(m.dc_gain <= np.array([bound.gain(p) for p in full]) * (1 + 1e-9))

import pytest
from hypothesis import given, strategies as st

from hybridtw import build_grid, insert_fault
from hybridtw.errors import ModelError

CLASS = dict(kind="ohl", R=0.0, L=1e-3, C=1e-8)


def spec(nodes, edges):
    return dict(nodes=[dict(id=n) for n in nodes],
                edges=[dict(id=e, nodes=[a, b], length=ln, segment_class="c") for e, a, b, ln in edges],
                segment_classes=dict(c=CLASS))


def test_canonical_grid(grid):
    assert [n.id for n in grid.nodes] == [f"q{k}" for k in range(1, 9)]
    assert {e.id for e in grid.edges} == {"e12", "e13", "e24", "e15", "e56", "e67", "e78", "e84"}
    assert [grid.segment(e).kind for e in ("e15", "e56", "e67", "e78", "e84")] == \
        ["ohl", "cable", "ohl", "cable", "ohl"]
    assert all(grid.node(f"q{k}").station is not None for k in range(1, 5))


def test_near_side_is_lower_declared_endpoint(grid):
    fg, _ = insert_fault(grid, "e84", 10.0, 1.0)  # declared q8 -> q4, q4 comes first
    assert fg.near == "q4" and fg.near_edge == "e84/q4"
    assert fg.edge_length("e84/q4") == 10.0 and fg.edge_length("e84/q8") == 50.0
    assert ("qf", "e84/q4") in fg.neighbors("q4")


@given(frac=st.floats(1e-6, 1 - 1e-6))
def test_split_lengths_add_up(grid, frac):
    L = grid.edge("e67").length
    d = frac * L
    fg, p = insert_fault(grid, "e67", d, 5.0)
    assert fg.edge_length(fg.near_edge) == d
    assert fg.edge_length(fg.near_edge) + fg.edge_length(fg.far_edge) == pytest.approx(L, abs=1e-12 * L)
    assert fg.with_distance(L / 3).edge_length(fg.near_edge) == L / 3
    assert p.d_f == d and fg.node_kind("qf") == "fault"


@pytest.mark.parametrize("nodes,edges,code", [
    (["a", "a"], [], "duplicate-id"),
    (["a", "b"], [("e", "a", "c", 1.0)], "dangling-node"),
    (["a", "b"], [("e", "a", "a", 1.0)], "self-loop"),
    (["a", "b"], [("e", "a", "b", 1.0), ("f", "b", "a", 2.0)], "parallel-edge"),
    (["a", "b", "c"], [("e", "a", "b", 1.0)], "disconnected"),
    (["a", "b"], [("e", "a", "b", 0.0)], "bad-length"),
    (["a", "qf"], [("e", "a", "qf", 1.0)], "duplicate-id"),
])
def test_grid_validation(nodes, edges, code):
    with pytest.raises(ModelError) as exc:
        build_grid(spec(nodes, edges))
    assert exc.value.code == code


@pytest.mark.parametrize("d,r,code", [(0.0, 1, "fault-at-node"), (100.0, 1, "fault-at-node"),
                                      (150.0, 1, "distance-out-of-range"), (5.0, -1, "bad-resistance")])
def test_fault_validation(d, r, code):
    g = build_grid(spec(["a", "b"], [("e", "a", "b", 100.0)]))
    with pytest.raises(ModelError) as exc:
        insert_fault(g, "e", d, r)
    assert exc.value.code == code


def test_unknown_edge():
    g = build_grid(spec(["a", "b"], [("e", "a", "b", 100.0)]))
    with pytest.raises(ModelError) as exc:
        insert_fault(g, "zz", 1.0, 1.0)
    assert exc.value.code == "unknown-edge"

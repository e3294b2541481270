import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import CONFIGS
from hybridtw.config import (dumps_json, load_step_table_csv, load_trace_csv, load_waveform_csv, parse_scenario,
                             write_step_table_csv, write_trace_csv, write_waveform_csv)
from hybridtw.errors import ModelError
from hybridtw.estimator import EstimateState
from hybridtw.twmodel import surrogate_table

HEAD = 'grid = "canonical_grid.toml"\n'


def parse(body):
    return parse_scenario(HEAD + body, CONFIGS)


def test_scenario_fields(f3):
    assert f3.fs == 1e6 and f3.node == "q1" and f3.relay_edge == "e15"
    assert f3.fault.edge == "e67" and f3.fault.d_f == 50.0 and f3.fault.R_f == 70.0
    assert f3.estimation.budget_s == pytest.approx(500e-6) and f3.estimation.line[2] == "e67"
    assert f3.noise.snr_db == 40.0 and f3.noise.seed == 7


@pytest.mark.parametrize("body,code,line", [
    ('[observation]\nnode = "q1"\n[fault]\nedge = "e99"\nd_f = 1.0\nR_f = 1.0\n', "unknown-edge", 5),
    ('[observation]\nnode = "q9"\n', "dangling-node", 3),
    ('[observation]\nnode = "q1"\n[estimation]\nline = ["e15", "zz"]\n', "unknown-edge", 5),
    ('[observation]\nnode = "q1"\n[estimation]\nbogus = 1\n', "unknown-key", 5),
    ('[observation]\nnode = "q1"\n[noise]\nsigma_v = -1.0\n', "bad-value", 5),
    ('[observation\nnode = "q1"\n', "syntax", 2),
])
def test_errors_carry_line_numbers(body, code, line):
    with pytest.raises(ModelError) as exc:
        parse(body)
    assert exc.value.code == code and exc.value.line == line


def test_missing_grid_file():
    with pytest.raises(ModelError) as exc:
        parse_scenario('grid = "nope.toml"\n', CONFIGS)
    assert exc.value.code == "unreadable-file" and exc.value.line == 1


floats = st.floats(-1e9, 1e9, allow_nan=False)


@settings(max_examples=25)
@given(v=st.lists(floats, min_size=2, max_size=20))
def test_waveform_csv_round_trip(v):
    n = len(v)
    t = np.arange(n) / 1e6
    buf = io.StringIO()
    write_waveform_csv(buf, t, v, v[::-1])
    path = pytest.importorskip("pathlib").Path
    tmp = path(__import__("tempfile").mkdtemp()) / "w.csv"
    tmp.write_text(buf.getvalue())
    t2, v2, i2 = load_waveform_csv(tmp, 1e6)
    assert np.array_equal(v2, np.array(v)) and np.array_equal(i2, np.array(v[::-1]))
    assert np.array_equal(t2, t)


def test_waveform_csv_rejects_irregular_time(tmp_path):
    p = tmp_path / "w.csv"
    p.write_text("t_s,v_V,i_A\n0,1,1\n1e-6,1,1\n3e-6,1,1\n")
    with pytest.raises(ModelError) as exc:
        load_waveform_csv(p, 1e6)
    assert exc.value.code == "bad-timebase" and exc.value.line == 4


def test_step_table_and_trace_round_trip(tmp_path):
    table = surrogate_table("ohl", 8e-8, 1.0, [0, 7.5, 30], 16, 1e6)
    write_step_table_csv(tmp_path / "t.csv", table)
    back = load_step_table_csv(tmp_path / "t.csv", "ohl", 1e6)
    assert np.array_equal(back.responses, table.responses) and np.array_equal(back.distances, table.distances)
    states = [EstimateState(1, 10, 1 / 3, 2 / 7, 1e-17, float("inf"), "running", 0.1, None, None)]
    write_trace_csv(tmp_path / "tr.csv", states)
    row = load_trace_csv(tmp_path / "tr.csv")[0]
    assert row["d_f"] == 1 / 3 and row["R_f"] == 2 / 7 and row["area"] == float("inf")


def test_json_is_sorted_and_finite():
    out = dumps_json({"b": float("inf"), "a": np.float64(0.1)})
    assert out.index('"a"') < out.index('"b"') and '"inf"' in out

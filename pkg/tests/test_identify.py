import math

import pytest

from hybridtw.estimator import EstimateState, Hypothesis
from hybridtw.identify import (REJECTED, RUNNING, VALIDATED, IdentificationResult, ValidityDomain,
                               hypothesis_step, select_fault, settled)
from hybridtw.scenario import identify, synthesize_record

CAB = Hypothesis(0, "e56", "cable", 20.0)
OHL = Hypothesis(1, "e67", "ohl", 80.0)


def state(d=10.0, r=1.0, cost=10.0, area=1.0, n=20, status=RUNNING):
    return EstimateState(1, n, d, r, cost, area, status, 1e-2, None, None)


def test_validity_domain():
    dom = ValidityDomain()
    assert dom.contains(CAB, 5.0, 4.9) and not dom.contains(CAB, 5.0, 5.1)
    assert dom.contains(OHL, 5.0, 150.0) and not dom.contains(OHL, 80.0, 1.0)
    with pytest.raises(ValueError):
        ValidityDomain({"cable": 0.0})


def test_settled_uses_edge_and_relative_scales():
    prev = state(d=10.0, r=1.0)
    assert settled(prev, state(d=10.09, r=1.009), CAB)  # 0.5 % of 20 km, 1 %
    assert not settled(prev, state(d=10.11, r=1.0), CAB)
    assert not settled(prev, state(d=10.0, r=1.02), CAB)
    assert not settled(None, prev, CAB)


def test_hypothesis_step_rules():
    dom = ValidityDomain()
    prev = state()
    assert hypothesis_step(state(), prev, CAB, dom, 10.0) == VALIDATED
    assert hypothesis_step(state(), None, CAB, dom, 10.0) == RUNNING
    assert hypothesis_step(state(r=6.0), state(r=6.0), CAB, dom, 10.0) == RUNNING
    assert hypothesis_step(state(r=6.0), state(r=6.0), CAB, dom, 10.0, budget_exhausted=True) == REJECTED
    assert hypothesis_step(state(area=11.0), prev, CAB, dom, 10.0) == RUNNING
    assert hypothesis_step(state(d=12.0), prev, CAB, dom, 10.0) == RUNNING
    assert hypothesis_step(state(status=REJECTED), prev, CAB, dom, 10.0) == REJECTED


def test_select_fault_waits_for_best_admissible_fit():
    dom = ValidityDomain()
    states = {"e56": state(cost=30.0, status=VALIDATED), "e67": state(cost=20.0, status=VALIDATED)}
    assert select_fault([CAB, OHL], states, dom)[0] is OHL
    # the better fit is still settling: no decision yet
    states["e67"].status = RUNNING
    assert select_fault([CAB, OHL], states, dom) is None
    # outside the validity domain it no longer blocks the other hypothesis
    states["e67"].R_f = 500.0
    assert select_fault([CAB, OHL], states, dom)[0] is CAB
    states["e67"] = state(cost=1.0, status=REJECTED)
    assert select_fault([CAB, OHL], states, dom)[0] is CAB
    assert select_fault([CAB, OHL], {}, dom) is None


def test_reclosing_follows_segment_kind():
    res = IdentificationResult("e67", "ohl", 1.0, 1.0, 1.0, 1, 10, {}, {})
    assert res.reclosing_advised and res.summary()["edge"] == "e67"
    none = IdentificationResult(None, None, None, None, None, None, None, {}, {})
    assert not none.reclosing_advised and none.summary()["edge"] == "none"


def test_f1_end_to_end(request):
    from conftest import CONFIGS
    from hybridtw.config import load_scenario
    cfg = load_scenario(CONFIGS / "f1.toml")
    res = identify(cfg, synthesize_record(cfg))
    assert res.edge == "e15" and res.reclosing_advised
    assert res.d_f == pytest.approx(100.0, abs=1.0) and res.R_f == pytest.approx(5.0, rel=0.05)
    assert math.isfinite(res.area) and res.area < cfg.estimation.t_alpha


def test_f1_sub_sample_arrival_still_identified():
    from conftest import CONFIGS
    from hybridtw.config import load_scenario
    cfg = load_scenario(CONFIGS / "f1.toml")
    res = identify(cfg, synthesize_record(cfg, snap=False))
    assert res.edge == "e15"
    assert res.d_f == pytest.approx(100.0, abs=2.0) and res.R_f == pytest.approx(5.0, rel=0.1)

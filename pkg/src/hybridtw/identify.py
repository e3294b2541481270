"""Hypothesis manager: one estimator per protected edge, validity and accuracy tests."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from .estimator import (EstimateState, Estimator, Hypothesis, HypothesisModel, LineGeometry, LmSettings,
                        MeasurementWindow)
from .grid import GridGraph
from .lineparams import CABLE, OHL

RUNNING, VALIDATED, REJECTED = "running", "validated", "rejected"


@dataclass(frozen=True)
class ValidityDomain:
    r_max: dict = field(default_factory=lambda: {CABLE: 5.0, OHL: 200.0})

    def __post_init__(self):
        for kind, r in self.r_max.items():
            if not r > 0:
                raise ValueError(f"R_max for {kind} must be > 0")

    def contains(self, hyp: Hypothesis, d_f: float, r_f: float) -> bool:
        return 0.0 < d_f < hyp.length and 0.0 <= r_f <= self.r_max[hyp.kind]


@dataclass
class IdentificationResult:
    edge: str | None
    kind: str | None
    d_f: float | None
    R_f: float | None
    area: float | None
    iteration: int | None  # synchronized iteration of the decision
    n: int | None
    traces: dict[str, list[EstimateState]]
    final: dict[str, EstimateState]

    @property
    def reclosing_advised(self) -> bool:
        """Overhead-line faults are likely temporary."""
        return self.kind == OHL

    def summary(self) -> dict:
        hyps = {}
        for edge, st in self.final.items():
            hyps[edge] = dict(status=st.status, d_f_km=st.d_f, R_f_ohm=st.R_f, cost=st.cost,
                              area95=st.area, iterations=st.iteration, n=st.n)
        return dict(edge=self.edge if self.edge else "none", segment_kind=self.kind, d_f_km=self.d_f,
                    R_f_ohm=self.R_f, area95=self.area, iterations=self.iteration, n=self.n,
                    reclosing_advised=self.reclosing_advised, hypotheses=hyps)


def settled(prev: EstimateState | None, cur: EstimateState, hyp: Hypothesis,
            tol_d: float = 0.005, tol_r: float = 0.01) -> bool:
    """Estimate moved less than ``tol_d`` (fraction of the edge) and ``tol_r`` (relative) since the last window."""
    if prev is None:
        return False
    return (abs(cur.d_f - prev.d_f) <= tol_d * hyp.length
            and abs(cur.R_f - prev.R_f) <= tol_r * max(abs(cur.R_f), hyp.r_min))


def hypothesis_step(state: EstimateState, prev: EstimateState | None, hyp: Hypothesis, domain: ValidityDomain,
                    t_alpha: float, budget_exhausted: bool = False, settle: tuple[float, float] = (0.005, 0.01)) -> str:
    """Status after the validity, accuracy and settling tests."""
    if state.status == REJECTED:
        return REJECTED
    if (domain.contains(hyp, state.d_f, state.R_f) and state.area < t_alpha
            and settled(prev, state, hyp, *settle)):
        return VALIDATED
    if budget_exhausted:
        return REJECTED
    return RUNNING


def select_fault(hypotheses: list[Hypothesis], states: dict[str, EstimateState],
                 domain: ValidityDomain) -> tuple[Hypothesis, EstimateState] | None:
    """Lowest-cost hypothesis inside the validity domain, if it is validated (ties: line order).

    A validated hypothesis is not chosen while a better-fitting admissible one
    is still settling.
    """
    best = None
    for hyp in hypotheses:
        st = states.get(hyp.edge)
        if st is None or st.status == REJECTED or not domain.contains(hyp, st.d_f, st.R_f):
            continue
        if best is None or st.cost < best[1].cost:
            best = (hyp, st)
    if best is None or best[1].status != VALIDATED:
        return None
    return best


def build_hypotheses(grid: GridGraph, line: LineGeometry, r_min: float = 0.01, r_box: float = 1e4,
                     r_init: dict | None = None) -> list[Hypothesis]:
    r_init = r_init or {}
    out = []
    for k, eid in enumerate(line.edges):
        kind = grid.segment(eid).kind
        out.append(Hypothesis(k, eid, kind, grid.edge(eid).length, r_min, r_box, None, r_init.get(kind)))
    return out


def run_identification(grid: GridGraph, line: LineGeometry, meas: MeasurementWindow,
                       hypotheses: list[Hypothesis] | None = None, domain: ValidityDomain = ValidityDomain(),
                       t_alpha: float = 10.0, delta_n: int = 10, n_budget: int = 500,
                       relay_edge: str | None = None, settings: LmSettings = LmSettings(),
                       amplitude_threshold: float = 1e-4, settle: tuple[float, float] = (0.005, 0.01),
                       workers: int = 1, follow_up: bool = False) -> IdentificationResult:
    """Run all hypotheses on synchronized growing windows until one is validated.

    A hypothesis passes when its estimate lies in the validity domain, its 95 %
    confidence area is below ``t_alpha`` and it has settled between two
    consecutive windows. The decision is taken at the first iteration where
    the lowest-cost admissible hypothesis passes. A hypothesis that has not
    passed when ``n_budget`` samples are used up is rejected. With
    ``follow_up`` the others keep iterating to the budget so their traces are
    complete; the decision itself does not change.
    """
    hypotheses = hypotheses or build_hypotheses(grid, line)
    n_budget = min(n_budget, meas.available)

    def make(h):
        return Estimator(HypothesisModel(grid, h, line, meas.fs, n_budget, relay_edge, amplitude_threshold),
                         meas, settings)

    pool = ThreadPoolExecutor(workers) if workers > 1 else None
    try:
        run = pool.map if pool else map
        estimators = dict(zip((h.edge for h in hypotheses), run(make, hypotheses)))
        traces: dict[str, list[EstimateState]] = {h.edge: [] for h in hypotheses}
        final: dict[str, EstimateState] = {}
        decision = None
        j = 0
        while True:
            j += 1
            n = j * delta_n
            if n > n_budget or j > settings.max_iter:
                break
            last = (j + 1) * delta_n > n_budget or j == settings.max_iter
            active = [h for h in hypotheses if final.get(h.edge) is None or final[h.edge].status != REJECTED]
            if not active:
                break
            states = list(run(lambda h: estimators[h.edge].step(n), active))
            for h, st in zip(active, states):
                st.status = hypothesis_step(st, final.get(h.edge), h, domain, t_alpha, last, settle)
                if st.status == REJECTED:
                    estimators[h.edge].status = REJECTED
                traces[h.edge].append(st)
                final[h.edge] = st
            if decision is None:
                chosen = select_fault(hypotheses, final, domain)
                if chosen is not None:
                    hyp, st = chosen
                    decision = (hyp.edge, hyp.kind, st.d_f, st.R_f, st.area, j, n)
                    if not follow_up:
                        break
        if decision is None:
            for h in hypotheses:
                st = final.get(h.edge)
                if st is not None and st.status == RUNNING:
                    st.status = REJECTED
            decision = (None,) * 7
        return IdentificationResult(*decision, traces, final)
    finally:
        if pool:
            pool.shutdown()


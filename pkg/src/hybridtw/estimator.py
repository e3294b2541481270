"""Per-hypothesis estimation of (d_f, R_f) from single-ended relay samples.

The fault instant is never a free parameter: the first wave reaches the
relay at the detection sample ``k_d``, so ``t_f = k_d/fs - tau_direct(d_f)``
where ``tau_direct`` follows the protected line from the relay to the fault.
Inside the model this puts the direct wave at a fixed internal sample and
every other wave at ``fs * (tau_path - tau_direct)`` after it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ModelError
from .grid import FaultParams, GridGraph, insert_fault
from .lineparams import CABLE
from .paths import DEFAULT_EXPANSION_CAP, Path, PathBudget, enumerate_paths, make_path
from .twmodel import DEFAULT_AMPLITUDE_THRESHOLD, DcGainBound, FrequencyGrid, WaveModel

CHI2_2_95 = 5.991
EDGE_MARGIN = 1e-3  # km kept between an estimate and the edge ends
ENUM_SPAN = (0.1, 0.9)  # fractions of the edge where the frozen path set is complete
BUDGET_MARGIN = 0.1


@dataclass(frozen=True)
class LineGeometry:
    """Protected line walked from the relay node: entry node and delay per edge."""

    grid: GridGraph
    edges: tuple[str, ...]
    relay_node: str
    entry: tuple[str, ...]
    offset: tuple[float, ...]  # delay from the relay to each edge's entry node, s

    @classmethod
    def build(cls, grid: GridGraph, edges, relay_node: str) -> "LineGeometry":
        edges = tuple(edges)
        if not edges:
            raise ModelError("bad-line", "protected line has no edges")
        node, acc = relay_node, 0.0
        entry, offset = [], []
        for eid in edges:
            e = grid.edge(eid)
            if node not in (e.a, e.b):
                raise ModelError("bad-line", f"edge {eid!r} does not continue the line at {node!r}")
            entry.append(node)
            offset.append(acc)
            acc += e.length / grid.segment(eid).speed
            node = e.other(node)
        return cls(grid, edges, relay_node, tuple(entry), tuple(offset))

    def _index(self, edge_id: str) -> int:
        try:
            return self.edges.index(edge_id)
        except ValueError:
            raise ModelError("bad-line", f"edge {edge_id!r} is not on the protected line") from None

    def direct_delay(self, edge_id: str, d_f: float) -> float:
        """Delay from the fault to the relay along the line."""
        k = self._index(edge_id)
        e = self.grid.edge(edge_id)
        near = e.a if self.grid.order(e.a) < self.grid.order(e.b) else e.b
        inside = d_f if self.entry[k] == near else e.length - d_f
        return self.offset[k] + inside / self.grid.segment(edge_id).speed

    def direct_slope(self, edge_id: str) -> float:
        k = self._index(edge_id)
        e = self.grid.edge(edge_id)
        near = e.a if self.grid.order(e.a) < self.grid.order(e.b) else e.b
        sign = 1.0 if self.entry[k] == near else -1.0
        return sign / self.grid.segment(edge_id).speed


def detection_time(p: FaultParams, line: LineGeometry) -> float:
    """Instant the first fault wave reaches the relay."""
    return p.t_f + line.direct_delay(p.e_f, p.d_f)


def fault_time(t_d: float, edge_id: str, d_f: float, line: LineGeometry) -> float:
    """Inverse of :func:`detection_time` for ``t_f``."""
    return t_d - line.direct_delay(edge_id, d_f)


@dataclass
class MeasurementWindow:
    """Relay record; ``v_pre``/``i_pre`` are the pre-fault levels removed before fitting."""

    fs: float
    k_d: int
    v: np.ndarray
    i: np.ndarray
    V_bf: float
    sigma_v: float
    sigma_i: float
    v_pre: float = 0.0
    i_pre: float = 0.0

    def __post_init__(self):
        self.v = np.asarray(self.v, dtype=float)
        self.i = np.asarray(self.i, dtype=float)
        if self.v.shape != self.i.shape or self.v.ndim != 1:
            raise ModelError("bad-measurements", "v and i must be 1-D arrays of equal length")
        if not (self.sigma_v > 0 and self.sigma_i > 0):
            raise ModelError("bad-measurements", "noise standard deviations must be > 0")
        if not 0 <= self.k_d < self.v.size:
            raise ModelError("bad-measurements", f"detection index {self.k_d} outside the record")

    @property
    def available(self) -> int:
        return self.v.size - self.k_d

    def segment(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        if n > self.available:
            raise ModelError("insufficient-data", f"{n} samples requested, {self.available} recorded after k_d")
        sl = slice(self.k_d, self.k_d + n)
        return self.v[sl] - self.v_pre, self.i[sl] - self.i_pre


def detect_arrival(v: np.ndarray, threshold: float, start: int = 0, level: float | None = None) -> int:
    """First index where ``|v - level|`` exceeds ``threshold`` (``level`` defaults to ``v[start]``)."""
    v = np.asarray(v, dtype=float)
    dev = np.abs(v[start:] - (v[start] if level is None else level))
    hit = np.nonzero(dev > threshold)[0]
    if hit.size == 0:
        raise ModelError("no-detection", "no sample exceeds the detection threshold")
    return int(start + hit[0])


@dataclass(frozen=True)
class Hypothesis:
    index: int
    edge: str
    kind: str
    length: float
    r_min: float = 0.01
    r_box: float = 1e4
    d_init: float | None = None
    r_init: float | None = None

    @property
    def d_bounds(self) -> tuple[float, float]:
        m = min(EDGE_MARGIN, self.length / 4)
        return m, self.length - m

    def initial(self) -> tuple[float, float]:
        d = self.length / 2 if self.d_init is None else self.d_init
        r = (1.0 if self.kind == CABLE else 10.0) if self.r_init is None else self.r_init
        return self.project(d, r)

    def project(self, d: float, r: float) -> tuple[float, float]:
        lo, hi = self.d_bounds
        return float(min(max(d, lo), hi)), float(min(max(r, self.r_min), self.r_box))


@dataclass
class EstimateState:
    iteration: int
    n: int
    d_f: float
    R_f: float
    cost: float
    area: float
    status: str = "running"
    damping: float = 1e-2
    jacobian: np.ndarray | None = field(default=None, repr=False)
    fim: np.ndarray | None = field(default=None, repr=False)
    message: str = ""


def cost_value(v_model, i_model, v_meas, i_meas, sigma_v: float, sigma_i: float) -> float:
    rv = np.asarray(v_model) - v_meas
    ri = np.asarray(i_model) - i_meas
    return float(rv @ rv / sigma_v ** 2 + ri @ ri / sigma_i ** 2)


def confidence_area(J: np.ndarray, sigma_v: float | None = None, sigma_i: float | None = None,
                    weighted: bool = False) -> float:
    """Area of the 95% confidence ellipse from the Fisher information.

    ``J`` stacks voltage rows then current rows (``2n x 2``) unless
    ``weighted`` is set, in which case rows are already divided by sigma.
    """
    J = np.asarray(J, dtype=float)
    if not weighted:
        n = J.shape[0] // 2
        w = np.concatenate([np.full(n, 1.0 / sigma_v), np.full(J.shape[0] - n, 1.0 / sigma_i)])
        J = J * w[:, None]
    return area_from_fim(J.T @ J)


def area_from_fim(F: np.ndarray) -> float:
    det = float(np.linalg.det(F))
    scale = float(np.max(np.abs(F))) if F.size else 0.0
    if not det > 1e-13 * scale ** 2 or not np.isfinite(det):
        return math.inf
    return math.pi * CHI2_2_95 / math.sqrt(det)


class HypothesisModel:
    """Relay waveforms under one hypothesis as a function of (d_f, R_f)."""

    def __init__(self, grid: GridGraph, hyp: Hypothesis, line: LineGeometry, fs: float, n_budget: int,
                 relay_edge: str | None = None, amplitude_threshold: float = DEFAULT_AMPLITUDE_THRESHOLD,
                 max_expansions: int = DEFAULT_EXPANSION_CAP):
        self.hyp = hyp
        self.line = line
        self.fs = float(fs)
        self.n_budget = int(n_budget)
        lo, hi = hyp.d_bounds
        fg, _ = insert_fault(grid, hyp.edge, 0.5 * (lo + hi), 1.0)
        self.fg = fg
        node = line.relay_node
        span = self.n_budget / self.fs * (1.0 + BUDGET_MARGIN)
        # delays relative to the direct wave are affine in d_f, so enumerating
        # at both ends of the span admits every path needed inside it
        found: dict[tuple[str, ...], Path] = {}
        ends = (max(lo, ENUM_SPAN[0] * hyp.length), min(hi, ENUM_SPAN[1] * hyp.length))
        for d in ends:
            fgd = fg.with_distance(d)
            tau_max = line.direct_delay(hyp.edge, d) + span
            gain = None
            if amplitude_threshold > 0:
                first = enumerate_paths(fgd, fg.fault_node, node, PathBudget(n_max=1), d, max_expansions)
                bound = DcGainBound(fgd, node, 0.0)
                if first:
                    bound.floor = amplitude_threshold * bound.gain(first[0]) * (1 - 1e-9)
                gain = bound
            for p in enumerate_paths(fgd, fg.fault_node, node, PathBudget(tau_max=tau_max), d,
                                     max_expansions, gain):
                found.setdefault(p.nodes, make_path(fg, p.nodes))
        paths = sorted(found.values(), key=lambda p: (p.delay(0.5 * (lo + hi)), p.nodes))
        rel = [min(p.delay(d) - line.direct_delay(hyp.edge, d) for d in (lo, hi)) for p in paths]
        self.lead = max(0, math.ceil(-min(rel, default=0.0) * self.fs - 0.5 + 1e-9)) if paths else 0
        n_int = self.lead + self.n_budget
        self.model = WaveModel(fg, paths, node, fs, n_int, relay_edge, FrequencyGrid.for_window(n_int, fs))
        if amplitude_threshold > 0 and paths:
            amp = np.maximum(self.model.amplitudes(hyp.r_min) / self.model.amplitudes(hyp.r_min).max(),
                             self.model.amplitudes(hyp.r_box) / self.model.amplitudes(hyp.r_box).max())
            keep = amp >= amplitude_threshold
            self._keep(keep)
        self.slope_direct = line.direct_slope(hyp.edge)

    def _keep(self, keep):
        m = self.model
        m.paths = [p for p, k in zip(m.paths, keep) if k]
        for name in ("BV", "BI", "dc_value", "dc_gain", "m_near", "m_far", "m_refl", "m_trans", "fixed_delay", "slope"):
            setattr(m, name, getattr(m, name)[keep])

    @property
    def paths(self) -> list[Path]:
        return self.model.paths

    def waveforms(self, d_f: float, r_f: float, v_bf: float, n: int, jacobian: bool = False):
        """Model samples ``k_d .. k_d+n-1``; with ``jacobian`` also ``(2n x 2)`` partials."""
        if n > self.n_budget:
            raise ModelError("insufficient-data", f"{n} samples exceed the model budget {self.n_budget}")
        pos0 = self.lead - self.fs * self.line.direct_delay(self.hyp.edge, d_f)
        out = self.model.evaluate(d_f, r_f, v_bf, pos0, -self.fs * self.slope_direct, jacobian)
        sl = slice(self.lead, self.lead + n)
        if not jacobian:
            return out.v[sl], out.i[sl], None
        J = np.empty((2 * n, 2))
        J[:n, 0], J[:n, 1] = out.dv_dd[sl], out.dv_dr[sl]
        J[n:, 0], J[n:, 1] = out.di_dd[sl], out.di_dr[sl]
        return out.v[sl], out.i[sl], J

    def fd_jacobian(self, d_f: float, r_f: float, v_bf: float, n: int, h_d: float = 1e-3,
                    h_r: float | None = None) -> np.ndarray:
        """Central finite differences (``h_r`` defaults to ``1e-3 * r_f``)."""
        h_r = 1e-3 * r_f if h_r is None else h_r
        J = np.empty((2 * n, 2))
        for col, (dd, dr) in enumerate(((h_d, 0.0), (0.0, h_r))):
            vp, ip, _ = self.waveforms(d_f + dd, r_f + dr, v_bf, n)
            vm, im, _ = self.waveforms(d_f - dd, r_f - dr, v_bf, n)
            h = 2 * (dd + dr)
            J[:n, col] = (vp - vm) / h
            J[n:, col] = (ip - im) / h
        return J


@dataclass(frozen=True)
class LmSettings:
    lambda0: float = 1e-2
    lambda_up: float = 10.0
    lambda_down: float = 10.0
    lambda_max: float = 1e12
    inner_tries: int = 8
    max_iter: int = 100
    fd_jacobian: bool = False
    max_step_d: float | None = 0.2  # largest distance step as a fraction of the edge length


class Estimator:
    """Growing-window Levenberg-Marquardt for one hypothesis."""

    def __init__(self, model: HypothesisModel, meas: MeasurementWindow, settings: LmSettings = LmSettings()):
        if meas.fs != model.fs:
            raise ModelError("fs-mismatch", f"measurements at {meas.fs} Hz, model at {model.fs} Hz")
        self.model = model
        self.meas = meas
        self.settings = settings
        self.hyp = model.hyp
        self.d, self.r = self.hyp.initial()
        self.damping = settings.lambda0
        self.iteration = 0
        self.status = "running"

    def _weights(self, n: int) -> np.ndarray:
        return np.concatenate([np.full(n, 1.0 / self.meas.sigma_v), np.full(n, 1.0 / self.meas.sigma_i)])

    def residuals(self, d: float, r: float, n: int, jacobian: bool = False):
        """Weighted residuals (model minus data) and optionally the weighted Jacobian."""
        vm, im = self.meas.segment(n)
        v, i, J = self.model.waveforms(d, r, self.meas.V_bf, n, jacobian and not self.settings.fd_jacobian)
        if jacobian and self.settings.fd_jacobian:
            J = self.model.fd_jacobian(d, r, self.meas.V_bf, n)
        w = self._weights(n)
        res = np.concatenate([v - vm, i - im]) * w
        return res, (J * w[:, None] if J is not None else None)

    def cost(self, d: float, r: float, n: int) -> float:
        res, _ = self.residuals(d, r, n)
        return float(res @ res)

    def step(self, n: int) -> EstimateState:
        """One damped Gauss-Newton update on the cost over ``n`` samples."""
        self.iteration += 1
        if self.status == "rejected":
            return self._state(n, math.nan, math.inf, None)
        res, J = self.residuals(self.d, self.r, n, jacobian=True)
        c0 = float(res @ res)
        A = J.T @ J
        g = J.T @ res
        msg = ""
        if not np.any(J):
            self.damping *= self.settings.lambda_up
            msg = "no sensitivity to the parameters"
        else:
            diag = np.diag(A).copy()
            diag[diag <= 0] = max(float(diag.max()), 1.0) * 1e-12
            for _ in range(self.settings.inner_tries):
                try:
                    delta = np.linalg.solve(A + self.damping * np.diag(diag), -g)
                except np.linalg.LinAlgError:
                    self.damping *= self.settings.lambda_up
                    continue
                cap = self.settings.max_step_d
                if cap is not None and abs(delta[0]) > cap * self.hyp.length:
                    delta = delta * (cap * self.hyp.length / abs(delta[0]))
                d_new, r_new = self.hyp.project(self.d + delta[0], self.r + delta[1])
                if d_new == self.d and r_new == self.r:
                    msg = "step vanishes"
                    break
                c_new = self.cost(d_new, r_new, n)
                if c_new <= c0:
                    self.d, self.r = d_new, r_new
                    self.damping = max(self.damping / self.settings.lambda_down, 1e-15)
                    res, J = self.residuals(self.d, self.r, n, jacobian=True)
                    c0 = float(res @ res)
                    break
                predicted = -(g @ delta + 0.5 * delta @ A @ delta)
                if predicted <= 1e-12 * max(c0, 1e-300):
                    msg = "converged"
                    break
                self.damping *= self.settings.lambda_up
                if self.damping > self.settings.lambda_max:
                    break
        if self.damping > self.settings.lambda_max:
            self.status = "rejected"
            msg = msg or "damping overflow"
        return self._state(n, c0, area_from_fim(J.T @ J), J, msg)

    def _state(self, n, cost, area, J, msg="") -> EstimateState:
        fim = None if J is None else J.T @ J
        return EstimateState(self.iteration, n, self.d, self.r, cost, area, self.status, self.damping, J, fim, msg)

    def run(self, delta_n: int = 10, n_max: int | None = None):
        """Yield one state per ``delta_n`` new samples until ``n_max`` or ``max_iter``."""
        n_max = min(n_max or self.model.n_budget, self.model.n_budget, self.meas.available)
        j = 1
        while j * delta_n <= n_max and j <= self.settings.max_iter:
            st = self.step(j * delta_n)
            yield st
            if st.status == "rejected":
                return
            j += 1


def lm_estimate(model: HypothesisModel, meas: MeasurementWindow, delta_n: int = 10,
                settings: LmSettings = LmSettings(), n_max: int | None = None) -> list[EstimateState]:
    return list(Estimator(model, meas, settings).run(delta_n, n_max))


def analytic_jacobian(model: HypothesisModel, d_f: float, r_f: float, v_bf: float, n: int) -> np.ndarray:
    """``(2n x 2)`` partials of (v, i) w.r.t. (d_f, R_f); t_f follows d_f through k_d."""
    return model.waveforms(d_f, r_f, v_bf, n, jacobian=True)[2]


def smooth_stencil(model: HypothesisModel, d_f: float, h: float) -> bool:
    """True when no wave crosses a sample boundary and no table knot lies in ``[d_f-h, d_f+h]``.

    The synthesis is piecewise linear in the arrival times and the tables in
    distance, so finite differences straddling either kind of kink are not
    a valid reference.
    """
    m = model.model
    k0 = None
    for d in (d_f - h, d_f, d_f + h):
        pos = model.lead - model.fs * model.line.direct_delay(model.hyp.edge, d) + model.fs * (
            m.fixed_delay + (m.m_near * d + m.m_far * (model.fg.length - d)) / m._fault_speed)
        k = np.floor(pos - 0.5)
        if k0 is not None and np.any(k != k0):
            return False
        k0 = k
    table = m.fault_table
    if table is not None:
        L = model.fg.length
        for lo, hi in ((d_f - h, d_f + h), (L - d_f - h, L - d_f + h)):
            if np.any((table.distances >= lo) & (table.distances <= hi)):
                return False
    return True


def jacobian_error(model: HypothesisModel, d_f: float, r_f: float, v_bf: float, n: int,
                   h_d: float = 1e-3, h_r_rel: float = 1e-3) -> np.ndarray:
    """Per-parameter error of the analytic Jacobian against central differences.

    Each column is compared over its active samples (nonzero reference) and
    normalized by the largest reference magnitude of that column and channel.
    """
    Ja = analytic_jacobian(model, d_f, r_f, v_bf, n)
    Jf = model.fd_jacobian(d_f, r_f, v_bf, n, h_d, h_r_rel * r_f)
    err = np.zeros(2)
    for col in range(2):
        for rows in (slice(0, n), slice(n, 2 * n)):
            ref = Jf[rows, col]
            scale = np.max(np.abs(ref))
            if scale == 0:
                continue
            active = ref != 0
            err[col] = max(err[col], float(np.max(np.abs(Ja[rows, col] - ref)[active]) / scale))
    return err

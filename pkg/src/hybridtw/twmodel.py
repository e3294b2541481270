"""Per-path traveling-wave synthesis and the node waveform sum.

Each wave is ``V_bf * (fault factor) * (junction kernel) * (FIR cascade)``
driven by a unit step that arrives at ``t_f + tau_path``.

Conventions
-----------
* The excitation is a step whose rise is one sample wide and centred on the
  arrival instant, so sample ``k`` holds ``clip(k - fs*t_arr + 0.5, 0, 1)``.
  The first nonzero sample is ``round(fs * t_arr)``, everything before it is
  exactly zero, and the samples are piecewise linear in the arrival time
  (this is what makes the delay differentiable).
* Frequency-dependent junction coefficients are sampled on a real-FFT grid
  and turned into kernels by an inverse FFT truncated to the window. The DC
  bin takes the ``s -> 0`` limit: stations are open circuits, lines keep
  their lossless admittance.
* FIR taps are dimensionless (``diff(u)``, unit DC gain once settled), so
  cascading and filtering are plain discrete convolutions.
* Every convolution is truncated to the window length ``n`` and evaluated on
  an FFT of length ``>= 2n``, which makes the first ``n`` samples exact.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ModelError
from .grid import FaultedGraph, FaultParams
from .junctions import NodeCoefficients, fault_coefficients, fault_factor, fault_factor_log_derivative
from .paths import Path, PathBudget, enumerate_paths

DEFAULT_AMPLITUDE_THRESHOLD = 1e-4
# Kernels come from spectra sampled at s = c + jw and are multiplied by
# exp(c t) afterwards, so a tail that wraps around one FFT period is
# attenuated by exp(-ALIAS_DECAY). Station and cable coefficients have poles
# far slower than any practical FFT period, which plain jw sampling would alias.
ALIAS_DECAY = math.log(1e10)


def next_pow2(n: int) -> int:
    return 1 << max(0, int(n - 1).bit_length())


@dataclass(frozen=True)
class FrequencyGrid:
    n_fft: int
    fs: float

    def __post_init__(self):
        if self.n_fft < 2 or self.n_fft & (self.n_fft - 1):
            raise ModelError("bad-grid", f"FFT length must be a power of two >= 2, got {self.n_fft}")
        if not self.fs > 0:
            raise ModelError("bad-grid", f"fs must be > 0, got {self.fs}")

    @classmethod
    def for_window(cls, n_window: int, fs: float) -> "FrequencyGrid":
        return cls(next_pow2(4 * max(int(n_window), 1)), fs)

    @property
    def n_bins(self) -> int:
        return self.n_fft // 2 + 1

    @property
    def omega(self) -> np.ndarray:
        return 2 * np.pi * np.arange(self.n_bins) * self.fs / self.n_fft

    @property
    def s(self) -> np.ndarray:
        return 1j * self.omega

    @property
    def damping(self) -> float:
        """Real shift (1/s) of the contour used to turn spectra into kernels."""
        return ALIAS_DECAY * self.fs / self.n_fft

    @property
    def s_damped(self) -> np.ndarray:
        return self.damping + 1j * self.omega

    def require(self, n_window: int) -> "FrequencyGrid":
        """Grid able to hold truncated convolutions of ``n_window`` samples.

        Grows the FFT once to the next power of two; a grid that still
        cannot hold the window raises ``window-overflow``.
        """
        if self.n_fft >= 2 * n_window:
            return self
        grown = FrequencyGrid(next_pow2(2 * n_window), self.fs)
        if grown.n_fft < 2 * n_window:
            raise ModelError("window-overflow", f"window of {n_window} samples does not fit")
        return grown


@dataclass(frozen=True)
class StepResponseTable:
    """Sampled unit-step responses of one segment class, delay removed.

    ``responses`` has shape ``(n_rho, n_d, n_samples)``; ``rhos`` is empty
    for a single-resistivity table.
    """

    segment_class: str
    distances: np.ndarray
    responses: np.ndarray
    fs: float
    rhos: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        d = np.asarray(self.distances, dtype=float)
        r = np.asarray(self.responses, dtype=float)
        rhos = np.asarray(self.rhos, dtype=float)
        if r.ndim == 2:
            r = r[None]
        if r.ndim != 3 or r.shape[1] != d.size:
            raise ModelError("bad-table", "responses must be (n_rho, n_d, n_samples) matching the distance knots")
        if d.size < 1 or np.any(np.diff(d) <= 0):
            raise ModelError("bad-table", "distance knots must be strictly increasing")
        if rhos.size not in (0, r.shape[0]) or (rhos.size == 0 and r.shape[0] != 1):
            raise ModelError("bad-table", "resistivity axis does not match responses")
        if rhos.size and np.any(np.diff(rhos) <= 0):
            raise ModelError("bad-table", "resistivity knots must be strictly increasing")
        if r.shape[2] < 2:
            raise ModelError("bad-table", "step responses need at least two samples")
        object.__setattr__(self, "distances", d)
        object.__setattr__(self, "responses", r)
        object.__setattr__(self, "rhos", rhos)

    @property
    def n_samples(self) -> int:
        return self.responses.shape[2]


def _segment(knots: np.ndarray, x: float, what: str) -> tuple[int, float]:
    """Index ``i`` and weight ``w`` such that ``x = knots[i] + w*(knots[i+1]-knots[i])``."""
    if not knots[0] <= x <= knots[-1]:
        raise ModelError("extrapolation-refused", f"{what} {x} outside table range [{knots[0]}, {knots[-1]}]")
    if knots.size == 1:
        return 0, 0.0
    i = min(int(np.searchsorted(knots, x, side="right")) - 1, knots.size - 2)
    return i, (x - knots[i]) / (knots[i + 1] - knots[i])


def _rho_slice(table: StepResponseTable, rho: float | None) -> np.ndarray:
    if table.rhos.size == 0:
        return table.responses[0]
    if rho is None:
        raise ModelError("missing-rho", f"table {table.segment_class!r} has a resistivity axis; give rho")
    i, w = _segment(table.rhos, rho, "resistivity")
    if w == 0.0:
        return table.responses[i]
    lo, hi = table.responses[i], table.responses[i + 1]
    return (hi - lo) / (table.rhos[i + 1] - table.rhos[i]) * (rho - table.rhos[i]) + lo


def interpolate_step(table: StepResponseTable, d: float, rho: float | None = None) -> np.ndarray:
    """Step response for length ``d``: linear between the bracketing knots.

    When the table has a resistivity axis it is interpolated first.
    """
    u = _rho_slice(table, rho)
    hit = np.nonzero(table.distances == d)[0]
    if hit.size:
        return u[hit[0]].copy()
    i, _ = _segment(table.distances, d, "distance")
    d0, d1 = table.distances[i], table.distances[i + 1]
    return (u[i + 1] - u[i]) / (d1 - d0) * (d - d0) + u[i]


def step_sensitivity(table: StepResponseTable, d: float, rho: float | None = None) -> np.ndarray:
    """``du/dd`` of the interpolated step response (slope of the active segment)."""
    u = _rho_slice(table, rho)
    if table.distances.size == 1:
        return np.zeros(u.shape[1])
    i, _ = _segment(table.distances, d, "distance")
    return (u[i + 1] - u[i]) / (table.distances[i + 1] - table.distances[i])


def impulse_response(u: np.ndarray, fs: float) -> np.ndarray:
    """FIR taps ``h(k) = (u(k+1) - u(k)) * fs`` (units of 1/s)."""
    u = np.asarray(u, dtype=float)
    if u.size < 2:
        raise ModelError("bad-step", "need at least two samples")
    return np.diff(u) * fs


def surrogate_step(d: float, a: float, b: float, n_samples: int, fs: float) -> np.ndarray:
    """First-order surrogate ``1 - exp(-k / (fs*T))`` with ``T = a * d**b`` seconds.

    ``d = 0`` gives the ideal step (0 at k = 0, 1 afterwards).
    """
    k = np.arange(n_samples, dtype=float)
    tau = a * d ** b if d > 0 else 0.0
    if tau == 0.0:
        u = np.ones(n_samples)
        u[0] = 0.0
        return u
    return 1.0 - np.exp(-k / (fs * tau))


def surrogate_table(segment_class: str, a: float, b: float, distances, n_samples: int,
                    fs: float) -> StepResponseTable:
    d = np.asarray(distances, dtype=float)
    resp = np.stack([surrogate_step(x, a, b, n_samples, fs) for x in d])
    return StepResponseTable(segment_class, d, resp[None], fs)


def ideal_table(segment_class: str, max_length: float, n_samples: int, fs: float) -> StepResponseTable:
    """Distortion-free table (every tap set is the unit delta)."""
    u = surrogate_step(0.0, 0.0, 1.0, n_samples, fs)
    return StepResponseTable(segment_class, np.array([0.0, max_length]), np.stack([u, u])[None], fs)


def _fit(x: np.ndarray, n: int) -> np.ndarray:
    out = np.zeros(n)
    m = min(n, x.size)
    out[:m] = x[:m]
    return out


def _delta(n: int) -> np.ndarray:
    out = np.zeros(n)
    out[0] = 1.0
    return out


def conv_trunc(a: np.ndarray, b: np.ndarray, n: int, n_fft: int) -> np.ndarray:
    """First ``n`` samples of the linear convolution of two causal sequences."""
    return np.fft.irfft(np.fft.rfft(_fit(a, n), n_fft) * np.fft.rfft(_fit(b, n), n_fft), n_fft)[:n]


def edge_taps(table: StepResponseTable | None, length: float, n: int, rho: float | None = None) -> np.ndarray:
    """Dimensionless FIR taps of one edge traversal (``h/fs``)."""
    if table is None:
        return _delta(n)
    return _fit(np.diff(interpolate_step(table, length, rho)), n)


def edge_taps_sensitivity(table: StepResponseTable | None, length: float, n: int,
                          rho: float | None = None) -> np.ndarray:
    if table is None:
        return np.zeros(n)
    return _fit(np.diff(step_sensitivity(table, length, rho)), n)


def path_filter(path: Path, d_f: float, fg: FaultedGraph, n: int, n_fft: int | None = None) -> np.ndarray:
    """Cascade of the per-traversal FIR taps of ``path`` (first ``n`` samples)."""
    n_fft = n_fft or next_pow2(2 * n)
    out = _delta(n)
    for eid in path.edges:
        taps = edge_taps(fg.table(eid), fg.edge_length(eid, d_f), n, fg.base_edge(eid).rho)
        out = conv_trunc(out, taps, n, n_fft)
    return out


def resolve_relay_edge(fg: FaultedGraph, node: str, relay_edge: str | None) -> str:
    """Edge id (in the faulted graph) whose current the relay at ``node`` measures."""
    incident = [eid for _, eid in fg.neighbors(node)]
    if relay_edge is None:
        if len(incident) != 1:
            raise ModelError("ambiguous-relay", f"node {node!r} has {len(incident)} lines; name the relay edge")
        return incident[0]
    if relay_edge == fg.edge_id:
        relay_edge = fg.near_edge if node == fg.near else fg.far_edge
    if relay_edge not in incident:
        raise ModelError("bad-relay", f"edge {relay_edge!r} is not incident to {node!r}")
    return relay_edge


def path_coefficients(path: Path, fg: FaultedGraph, coeffs: NodeCoefficients, relay_edge: str):
    """Junction products of ``path`` without the fault factor.

    Returns the voltage factor (ending with the transmission into the
    observation node) and the current factor for the relay edge: a wave
    arriving on the relay edge gives ``-(1 - K) Y v``, a wave arriving on
    another edge gives ``T Y_relay v``.
    """
    nodes, edges = path.nodes, path.edges
    if nodes[-1] == fg.fault_node:
        raise ModelError("bad-observation", "cannot observe at the fault node")
    prod = 1.0
    for i in range(1, len(nodes) - 1):
        q = nodes[i]
        if q == fg.fault_node:
            continue
        e_in = edges[i - 1]
        if nodes[i - 1] == nodes[i + 1]:
            prod = prod * coeffs.reflection(e_in, q)
        else:
            prod = prod * coeffs.transmission(e_in, q)
    e_last, q_s = edges[-1], nodes[-1]
    pair = coeffs.pair(e_last, q_s)
    cv = prod * pair.T
    if e_last == relay_edge:
        ci = prod * (pair.K - 1.0) * coeffs.admittance(e_last)
    else:
        ci = prod * pair.T * coeffs.admittance(relay_edge)
    return cv, ci


def coefficient_kernel(c, n: int, grid: FrequencyGrid) -> np.ndarray:
    """Causal time kernel, first ``n`` samples, of a coefficient sampled on ``grid.s_damped``."""
    if np.ndim(c) == 0:
        out = _delta(n)
        out[0] = complex(c).real
        return out
    spec = np.broadcast_to(np.asarray(c, dtype=complex), (grid.n_bins,))
    k = np.arange(n)
    return np.fft.irfft(spec, grid.n_fft)[:n] * np.exp(grid.damping * k / grid.fs)


def junction_product(path: Path, p: FaultParams, fg: FaultedGraph, grid: FrequencyGrid,
                     relay_edge: str | None = None, coeffs: NodeCoefficients | None = None) -> np.ndarray:
    """Half-spectrum of the junction product times ``V_bf`` (no 1/s, no delay).

    Sampled on ``grid.s`` (DC bin at the ``s -> 0`` limit) unless ``coeffs``
    was built on another contour.
    """
    coeffs = coeffs or NodeCoefficients(fg, grid.s)
    relay = path.edges[-1] if relay_edge is None else resolve_relay_edge(fg, path.nodes[-1], relay_edge)
    cv, _ = path_coefficients(path, fg, coeffs, relay)
    zs = fg.segment(fg.near_edge).zs_lossless
    f = fault_factor(zs, p.R_f, path.fault_reflections, path.fault_transmissions)
    return np.broadcast_to(np.asarray(cv * f * p.V_bf, dtype=complex), (grid.n_bins,)).copy()


def ramp_synthesis(kernel: np.ndarray, pos: float) -> np.ndarray:
    """Response of ``kernel`` to a one-sample-rise step centred at sample ``pos``."""
    n = kernel.size
    q = pos - 0.5
    k0 = math.floor(q)
    beta = q - k0
    out = np.zeros(n)
    c = np.cumsum(kernel)
    i1 = k0 + 1
    if i1 >= n:
        return out
    if i1 < 0:
        raise ModelError("window-overflow", "wave arrives before the synthesis window starts")
    out[i1:] += (1.0 - beta) * c[: n - i1]
    if i1 + 1 < n:
        out[i1 + 1:] += beta * c[: n - i1 - 1]
    return out


def physical_wave(path: Path, p: FaultParams, fg: FaultedGraph, grid: FrequencyGrid, n: int,
                  t0: float = 0.0, relay_edge: str | None = None) -> np.ndarray:
    """Physical part of one wave (no behavioral filters) sampled from ``t0``."""
    grid = grid.require(n)
    spec = junction_product(path, p, fg, grid, relay_edge, NodeCoefficients(fg, grid.s_damped))
    kernel = coefficient_kernel(spec if np.any(spec != spec[0]) else spec[0].real, n, grid)
    pos = grid.fs * (p.t_f + path.delay(p.d_f) - t0)
    return ramp_synthesis(kernel, pos)


@dataclass
class ModelOutput:
    v: np.ndarray
    i: np.ndarray
    dv_dd: np.ndarray | None = None
    dv_dr: np.ndarray | None = None
    di_dd: np.ndarray | None = None
    di_dr: np.ndarray | None = None
    positions: np.ndarray | None = None


class WaveModel:
    """Precomputed superposition of a fixed set of paths at one relay.

    Everything that does not depend on ``(d_f, R_f)`` (junction kernels,
    filters of edges away from the fault) is folded into one spectrum per
    path at construction; :meth:`evaluate` only builds the two fault-side
    filters, the fault factors and the step placement.
    """

    def __init__(self, fg: FaultedGraph, paths: list[Path], node: str, fs: float, n_samples: int,
                 relay_edge: str | None = None, grid: FrequencyGrid | None = None):
        self.fg = fg
        self.paths = list(paths)
        self.node = node
        self.fs = float(fs)
        self.n = int(n_samples)
        grid = (grid or FrequencyGrid.for_window(self.n, fs)).require(self.n)
        if grid.fs != self.fs:
            raise ModelError("fs-mismatch", f"grid fs {grid.fs} != model fs {fs}")
        self.grid = grid
        self.relay_edge = resolve_relay_edge(fg, node, relay_edge)
        self.zs_fault = fg.segment(fg.near_edge).zs_lossless
        self.fault_table = fg.table(fg.near_edge)
        self.fault_rho = fg.base_edge(fg.near_edge).rho
        for eid in fg.edge_ids:
            t = fg.table(eid)
            if t is not None and t.fs != self.fs:
                raise ModelError("fs-mismatch", f"step table for {eid!r} sampled at {t.fs} Hz, model at {fs} Hz")
        self.coeffs = NodeCoefficients(fg, grid.s_damped)
        dc_coeffs = NodeCoefficients(fg, np.zeros(1, dtype=complex))

        n, nfft = self.n, grid.n_fft
        taps_cache: dict[str, np.ndarray] = {}
        cascade_cache: dict[tuple, np.ndarray] = {}
        bv, bi, dc = [], [], []
        for path in self.paths:
            cv, ci = path_coefficients(path, fg, self.coeffs, self.relay_edge)
            fixed = tuple(sorted(e for e in path.edges if not fg.is_fault_edge(e)))
            if fixed not in cascade_cache:
                acc = _delta(n)
                for eid in fixed:
                    if eid not in taps_cache:
                        taps_cache[eid] = edge_taps(fg.table(eid), fg.edge_length(eid), n, fg.base_edge(eid).rho)
                    if fg.table(eid) is not None:
                        acc = conv_trunc(acc, taps_cache[eid], n, nfft)
                cascade_cache[fixed] = acc
            casc = cascade_cache[fixed]
            kv = conv_trunc(coefficient_kernel(cv, n, grid), casc, n, nfft)
            ki = conv_trunc(coefficient_kernel(ci, n, grid), casc, n, nfft)
            bv.append(np.fft.rfft(kv, nfft))
            bi.append(np.fft.rfft(ki, nfft))
            dc.append(complex(np.ravel(path_coefficients(path, fg, dc_coeffs, self.relay_edge)[0])[0]).real)
        nb = grid.n_bins
        self.BV = np.array(bv).reshape(len(self.paths), nb)
        self.BI = np.array(bi).reshape(len(self.paths), nb)
        self.dc_value = np.array(dc)
        self.dc_gain = np.abs(self.dc_value)
        self.m_near = np.array([p.m_near for p in self.paths], dtype=int)
        self.m_far = np.array([p.m_far for p in self.paths], dtype=int)
        self.m_refl = np.array([p.fault_reflections for p in self.paths], dtype=int)
        self.m_trans = np.array([p.fault_transmissions for p in self.paths], dtype=int)
        self.fixed_delay = np.array([p.fixed_delay for p in self.paths])
        self.slope = np.array([p.delay_slope for p in self.paths]) if self.paths else np.zeros(0)

    def delays(self, d_f: float) -> np.ndarray:
        return np.array([p.delay(d_f) for p in self.paths])

    def amplitudes(self, r_f: float) -> np.ndarray:
        """DC magnitude of each path's voltage junction product (per volt of V_bf)."""
        f = np.array([fault_factor(self.zs_fault, r_f, a, b) for a, b in zip(self.m_refl, self.m_trans)])
        return np.abs(f) * self.dc_gain

    def _filter_spectra(self, d_f: float, jacobian: bool):
        """Spectra of the fault-side cascades (and their d_f derivatives) per path."""
        n, nfft = self.n, self.grid.n_fft
        L = self.fg.length
        table, rho = self.fault_table, self.fault_rho
        if table is None:
            one = np.fft.rfft(_delta(n), nfft)
            zero = np.zeros_like(one)
            S = np.broadcast_to(one, self.BV.shape)
            return S, (np.broadcast_to(zero, self.BV.shape) if jacobian else None)
        g_n = edge_taps(table, d_f, n, rho)
        g_f = edge_taps(table, L - d_f, n, rho)
        pn = [_delta(n)]
        pf = [_delta(n)]
        for _ in range(int(self.m_near.max(initial=0))):
            pn.append(conv_trunc(pn[-1], g_n, n, nfft))
        for _ in range(int(self.m_far.max(initial=0))):
            pf.append(conv_trunc(pf[-1], g_f, n, nfft))
        if jacobian:
            dg_n = edge_taps_sensitivity(table, d_f, n, rho)
            dg_f = -edge_taps_sensitivity(table, L - d_f, n, rho)
        keys = sorted(set(zip(self.m_near.tolist(), self.m_far.tolist())))
        spec, dspec = {}, {}
        for a, b in keys:
            spec[a, b] = np.fft.rfft(conv_trunc(pn[a], pf[b], n, nfft), nfft)
            if jacobian:
                acc = np.zeros(n)
                if a:
                    acc += a * conv_trunc(conv_trunc(pn[a - 1], dg_n, n, nfft), pf[b], n, nfft)
                if b:
                    acc += b * conv_trunc(pn[a], conv_trunc(pf[b - 1], dg_f, n, nfft), n, nfft)
                dspec[a, b] = np.fft.rfft(acc, nfft)
        idx = list(zip(self.m_near.tolist(), self.m_far.tolist()))
        S = np.array([spec[k] for k in idx]).reshape(self.BV.shape)
        dS = np.array([dspec[k] for k in idx]).reshape(self.BV.shape) if jacobian else None
        return S, dS

    def evaluate(self, d_f: float, r_f: float, v_bf: float, pos0: float, dpos0: float = 0.0,
                 jacobian: bool = False) -> ModelOutput:
        """Waveforms over ``n`` samples.

        Path ``k`` arrives at sample ``pos0 + fs * delay_k(d_f)``; ``dpos0`` is
        ``d(pos0)/d(d_f)`` (nonzero when ``t_f`` is tied to a detection time).
        """
        n, nfft = self.n, self.grid.n_fft
        P = len(self.paths)
        zeros = np.zeros(n)
        if P == 0:
            z = ModelOutput(zeros.copy(), zeros.copy())
            if jacobian:
                z.dv_dd, z.dv_dr, z.di_dd, z.di_dr = (zeros.copy() for _ in range(4))
            return z
        S, dS = self._filter_spectra(d_f, jacobian)
        KV = np.fft.irfft(self.BV * S, nfft, axis=1)[:, :n]
        KI = np.fft.irfft(self.BI * S, nfft, axis=1)[:, :n]
        gain = v_bf * np.array([fault_factor(self.zs_fault, r_f, a, b) for a, b in zip(self.m_refl, self.m_trans)])
        pos = pos0 + self.fs * (self.fixed_delay + (self.m_near * d_f + self.m_far * (self.fg.length - d_f))
                                / self._fault_speed)
        q = pos - 0.5
        k0 = np.floor(q).astype(int)
        beta = q - k0
        i1 = k0 + 1
        if np.any(i1 < 0):
            raise ModelError("window-overflow", "a wave arrives before the synthesis window starts")
        live = i1 < n
        k = np.arange(n)
        idx1 = k[None, :] - i1[:, None]
        m1 = idx1 >= 0
        m2 = idx1 - 1 >= 0
        j1 = np.where(m1, idx1, 0)
        j2 = np.where(m2, idx1 - 1, 0)
        w1 = (1.0 - beta)[:, None]
        w2 = beta[:, None]

        def ramp(K):
            C = np.cumsum(K, axis=1)
            return w1 * np.where(m1, np.take_along_axis(C, j1, 1), 0.0) + \
                w2 * np.where(m2, np.take_along_axis(C, j2, 1), 0.0)

        yv = ramp(KV) * gain[:, None]
        yi = ramp(KI) * gain[:, None]
        yv[~live] = 0.0
        yi[~live] = 0.0
        out = ModelOutput(yv.sum(axis=0), yi.sum(axis=0), positions=pos)
        if not jacobian:
            return out
        dpos = dpos0 + self.fs * self.slope
        dK_V = np.fft.irfft(self.BV * dS, nfft, axis=1)[:, :n]
        dK_I = np.fft.irfft(self.BI * dS, nfft, axis=1)[:, :n]
        shiftV = np.where(m1, np.take_along_axis(KV, j1, 1), 0.0)
        shiftI = np.where(m1, np.take_along_axis(KI, j1, 1), 0.0)
        gv = (ramp(dK_V) - dpos[:, None] * shiftV) * gain[:, None]
        gi = (ramp(dK_I) - dpos[:, None] * shiftI) * gain[:, None]
        gv[~live] = 0.0
        gi[~live] = 0.0
        dlog = np.array([fault_factor_log_derivative(self.zs_fault, r_f, a, b)
                         for a, b in zip(self.m_refl, self.m_trans)])
        out.dv_dd = gv.sum(axis=0)
        out.di_dd = gi.sum(axis=0)
        out.dv_dr = (yv * dlog[:, None]).sum(axis=0)
        out.di_dr = (yi * dlog[:, None]).sum(axis=0)
        return out

    @property
    def _fault_speed(self) -> float:
        return self.fg.speed(self.fg.near_edge)

    def prune(self, r_f: float, threshold: float = DEFAULT_AMPLITUDE_THRESHOLD) -> "WaveModel":
        """Drop paths whose DC amplitude is below ``threshold`` times the largest."""
        amp = self.amplitudes(r_f)
        if amp.size == 0 or threshold <= 0:
            return self
        keep = amp >= threshold * amp.max()
        self.paths = [p for p, k in zip(self.paths, keep) if k]
        for name in ("BV", "BI", "dc_value", "dc_gain", "m_near", "m_far", "m_refl", "m_trans", "fixed_delay", "slope"):
            setattr(self, name, getattr(self, name)[keep])
        return self


class DcGainBound:
    """Amplitude pruning on DC coefficient magnitudes (see ``paths.GainBound``).

    Fault-node factors are bounded by ``fault_bound`` (1 covers every
    ``R_f >= 0``), so a pruned prefix is below ``floor`` for any fault
    resistance. ``remaining`` is the best product still reachable, solved by
    value iteration over (incoming edge, node) states; passive junctions
    have no loop gain above one, so the iteration settles.
    """

    def __init__(self, fg: FaultedGraph, target: str, floor: float, fault_bound: float = 1.0):
        self.fg = fg
        self.floor = floor
        self.fault_bound = fault_bound
        self.coeffs = NodeCoefficients(fg, np.zeros(1, dtype=complex))
        states = [(eid, q) for q in fg.nodes for _, eid in fg.neighbors(q)]
        base = {st: (abs(complex(self.coeffs.transmission(*st))) if st[1] == target else 0.0) for st in states}
        best = dict(base)
        for _ in range(len(states) + 2):
            changed = False
            for e_in, q in states:
                val = best[e_in, q]
                for nb, e_out in fg.neighbors(q):
                    cand = self.factor(e_in, q, e_out) * best[e_out, nb]
                    if cand > val * (1 + 1e-12):
                        val, changed = cand, True
                best[e_in, q] = val
            if not changed:
                break
        else:
            best = {st: math.inf for st in states}
        self._best = best

    def factor(self, e_in: str, node: str, e_out: str) -> float:
        if node == self.fg.fault_node:
            return self.fault_bound
        if e_in == e_out:
            return abs(complex(self.coeffs.reflection(e_in, node)))
        return abs(complex(self.coeffs.transmission(e_in, node)))

    def remaining(self, e_in: str, node: str) -> float:
        return self._best[e_in, node]

    def gain(self, path: Path) -> float:
        """DC magnitude of ``path`` with fault factors at their bound."""
        g = 1.0
        for i in range(1, len(path.nodes) - 1):
            g *= self.factor(path.edges[i - 1], path.nodes[i], path.edges[i])
        return g * abs(complex(self.coeffs.transmission(path.edges[-1], path.nodes[-1])))


@dataclass
class NodeWaveforms:
    t: np.ndarray
    v: np.ndarray
    i: np.ndarray
    paths: list[Path]
    amplitudes: np.ndarray


def simulate_node(fg: FaultedGraph, p: FaultParams, node: str, window: tuple[float, float], fs: float,
                  budget: PathBudget | None = None, relay_edge: str | None = None,
                  amplitude_threshold: float = DEFAULT_AMPLITUDE_THRESHOLD,
                  paths: list[Path] | None = None, max_expansions: int | None = None) -> NodeWaveforms:
    """Fault-induced voltage and current at ``node`` over ``window = (t0, duration)``.

    Waveforms are the transient part only (pre-fault levels excluded).
    Current is positive from the bus into ``relay_edge``.
    """
    if p.d_f != fg.d_f:
        fg = fg.with_distance(p.d_f)
    t0, duration = window
    n_win = int(round(duration * fs))
    if n_win < 1:
        raise ModelError("bad-window", f"window of {duration} s holds no sample at fs={fs}")
    lead = max(0, math.ceil(round((t0 - p.t_f) * fs, 9)))
    origin = t0 - lead / fs
    n_int = lead + n_win
    if paths is None:
        if budget is None:
            budget = PathBudget(tau_max=t0 + duration - p.t_f)
        kw = {} if max_expansions is None else {"max_expansions": max_expansions}
        paths = enumerate_paths(fg, fg.fault_node, node, budget, p.d_f, **kw)
    model = WaveModel(fg, paths, node, fs, n_int, relay_edge).prune(p.R_f, amplitude_threshold)
    out = model.evaluate(p.d_f, p.R_f, p.V_bf, pos0=fs * (p.t_f - origin))
    t = t0 + np.arange(n_win) / fs
    return NodeWaveforms(t, out.v[lead:], out.i[lead:], model.paths, model.amplitudes(p.R_f))

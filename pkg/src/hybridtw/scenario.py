"""Glue between a scenario file and the model: faults, synthetic records, windows."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import ScenarioConfig, load_waveform_csv
from .errors import ModelError
from .estimator import LineGeometry, LmSettings, MeasurementWindow, detect_arrival, detection_time
from .grid import FaultedGraph, FaultParams, insert_fault
from .identify import IdentificationResult, ValidityDomain, build_hypotheses, run_identification
from .lineparams import CABLE, OHL
from .twmodel import simulate_node


PRE_WINDOW = 200  # samples used for the detection reference
DETECT_SIGMAS = 5.0


@dataclass
class Record:
    t: np.ndarray
    v: np.ndarray  # total voltage, pre-fault level included
    i: np.ndarray
    k_d: int | None  # known first-arrival sample (synthetic records only)
    sigma_v: float
    sigma_i: float
    fault: FaultParams | None = None


def fault_of(cfg: ScenarioConfig) -> tuple[FaultedGraph, FaultParams]:
    if cfg.fault is None:
        raise ModelError("missing-key", "scenario has no [fault] section")
    f = cfg.fault
    return insert_fault(cfg.grid, f.edge, f.d_f, f.R_f, f.t_f, f.V_bf)


def protected_line(cfg: ScenarioConfig) -> LineGeometry:
    edges = cfg.estimation.line
    if not edges:
        if cfg.relay_edge is None:
            raise ModelError("missing-key", "[estimation] needs 'line' (or [observation] a relay_edge)")
        edges = (cfg.relay_edge,)
    return LineGeometry.build(cfg.grid, edges, cfg.node)


def snapped_fault(cfg: ScenarioConfig) -> FaultParams:
    """Fault whose first arrival at the relay falls exactly on a sample.

    ``t_f`` moves by less than half a sample; without a protected line the
    configured ``t_f`` is kept.
    """
    _, p = fault_of(cfg)
    if not cfg.estimation.line and cfg.relay_edge is None:
        return p
    line = protected_line(cfg)
    if p.e_f not in line.edges:
        return p
    t_d = detection_time(p, line)
    k = round((t_d - cfg.t0) * cfg.fs)
    return p.replace(t_f=cfg.t0 + k / cfg.fs - line.direct_delay(p.e_f, p.d_f))


def noise_levels(cfg: ScenarioConfig, v: np.ndarray, i: np.ndarray, k_d: int | None) -> tuple[float, float]:
    """Noise standard deviations; an SNR spec refers to the transient after ``k_d``."""
    nz = cfg.noise
    if nz.sigma_v is not None and nz.sigma_i is not None:
        return float(nz.sigma_v), float(nz.sigma_i)
    ratio = np.sqrt(nz.ratio)
    if nz.sigma_v is not None:
        return float(nz.sigma_v), float(nz.sigma_v * ratio)
    if nz.sigma_i is not None:
        return float(nz.sigma_i / ratio), float(nz.sigma_i)
    if nz.snr_db is None:
        return 0.0, 0.0
    start = k_d or 0
    n = max(1, int(round(cfg.estimation.budget_s * cfg.fs)))
    rms_v = float(np.sqrt(np.mean(v[start:start + n] ** 2)))
    rms_i = float(np.sqrt(np.mean(i[start:start + n] ** 2)))
    # both channels at least snr_db while keeping sigma_i^2 / sigma_v^2 fixed
    sig_i = min(rms_i, ratio * rms_v) / 10 ** (nz.snr_db / 20)
    return sig_i / ratio, sig_i


def synthesize_record(cfg: ScenarioConfig, noisy: bool = True, seed: int | None = None,
                      snap: bool = True) -> Record:
    """Relay record generated by the model itself, optionally with Gaussian noise.

    With ``snap`` the fault time is nudged so the first arrival sits on a sample.
    """
    fg, p = fault_of(cfg)
    if snap:
        p = snapped_fault(cfg)
    w = simulate_node(fg, p, cfg.node, (cfg.t0, cfg.duration), cfg.fs, cfg.budget, cfg.relay_edge,
                      cfg.estimation.amplitude_threshold)
    nz = np.flatnonzero(w.v)
    k_d = int(nz[0]) if nz.size else None
    sv, si = noise_levels(cfg, w.v, w.i, k_d)
    v = p.V_bf + w.v
    i = w.i.copy()
    if noisy and (sv > 0 or si > 0):
        rng = np.random.default_rng(cfg.noise.seed if seed is None else seed)
        v = v + rng.normal(0.0, sv, v.size) if sv > 0 else v
        i = i + rng.normal(0.0, si, i.size) if si > 0 else i
    return Record(w.t, v, i, k_d, sv, si, p)


def measurement_window(cfg: ScenarioConfig, rec: Record) -> MeasurementWindow:
    est = cfg.estimation
    v, i = rec.v, rec.i
    sv, si = rec.sigma_v, rec.sigma_i
    k_d = est.k_d if est.k_d is not None else rec.k_d
    if k_d is None:
        # leading samples give the detection reference until k_d is known
        lead = v[: max(20, min(PRE_WINDOW, v.size // 4))]
        thr = est.detect_threshold
        if thr is None:
            thr = DETECT_SIGMAS * (sv if sv > 0 else float(np.std(lead)) or 1e-12)
        k_d = detect_arrival(v, thr, level=float(np.mean(lead)))
    pre = k_d - 2
    if not (sv > 0 and si > 0):
        if pre < 20:
            raise ModelError("bad-noise", "noise levels unknown and too few pre-fault samples to estimate them")
        sv = sv if sv > 0 else float(np.std(v[:pre])) or 1e-12
        si = si if si > 0 else float(np.std(i[:pre])) or 1e-12
    if rec.fault is not None:
        v_bf, v_pre, i_pre = rec.fault.V_bf, rec.fault.V_bf, 0.0
    elif pre >= 20:
        v_pre, i_pre = float(np.mean(v[:k_d - 1])), float(np.mean(i[:k_d - 1]))
        v_bf = cfg.fault.V_bf if cfg.fault is not None else v_pre
    else:
        v_bf = v_pre = cfg.fault.V_bf if cfg.fault is not None else float(v[0])
        i_pre = 0.0
    return MeasurementWindow(cfg.fs, int(k_d), v, i, v_bf, sv, si, v_pre, i_pre)


def load_record(cfg: ScenarioConfig, path) -> Record:
    t, v, i = load_waveform_csv(path, cfg.fs)
    nz = cfg.noise
    sv = nz.sigma_v or (nz.sigma_i / np.sqrt(nz.ratio) if nz.sigma_i else 0.0)
    si = nz.sigma_i or (nz.sigma_v * np.sqrt(nz.ratio) if nz.sigma_v else 0.0)
    return Record(t, v, i, None, float(sv), float(si))


def lm_settings(cfg: ScenarioConfig) -> LmSettings:
    e = cfg.estimation
    return LmSettings(e.lambda0, e.lambda_up, e.lambda_down, e.lambda_max, e.inner_tries, e.max_iter, e.fd_jacobian,
                      e.max_step_d)


def identify(cfg: ScenarioConfig, rec: Record, workers: int = 1) -> IdentificationResult:
    est = cfg.estimation
    line = protected_line(cfg)
    meas = measurement_window(cfg, rec)
    hyps = build_hypotheses(cfg.grid, line, est.r_min, est.r_box, {OHL: est.r_init_ohl, CABLE: est.r_init_cable})
    domain = ValidityDomain({CABLE: est.r_max_cable, OHL: est.r_max_ohl})
    n_budget = int(round(est.budget_s * cfg.fs))
    return run_identification(cfg.grid, line, meas, hyps, domain, est.t_alpha, est.delta_n, n_budget,
                              cfg.relay_edge, lm_settings(cfg), est.amplitude_threshold, (est.settle_d, est.settle_r), workers,
                              est.follow_up)

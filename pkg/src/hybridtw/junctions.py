"""Reflection/transmission coefficients at junctions, stations and the fault.

Coefficients are either plain floats (all branch admittances real and
frequency independent) or complex arrays over the half-spectrum bins of a
frequency grid. Station branches contribute ``1/Z_mmc(s)`` and are open
circuits in the DC bin.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ModelError
from .grid import FAULT, STATION, FaultedGraph
from .lineparams import line_admittance, mmc_admittance


@dataclass(frozen=True)
class CoefficientPair:
    K: complex | float | np.ndarray  # reflection
    T: complex | float | np.ndarray  # transmission, always 1 + K


@dataclass(frozen=True)
class StepSurge:
    """Initial fault surge: ``amplitude`` times a unit step starting at ``t_f``."""

    amplitude: float
    t_f: float


def _collapse(x):
    """Return a scalar when an array is constant across bins."""
    arr = np.asarray(x)
    if arr.ndim == 0:
        v = arr.item()
        return v.real if isinstance(v, complex) and v.imag == 0 else v
    if np.all(arr == arr.flat[0]):
        return _collapse(arr.flat[0])
    return arr


def junction_coefficients(incoming, others: Sequence) -> CoefficientPair:
    """Coefficients for a wave arriving on the branch with admittance ``incoming``.

    ``others`` lists the admittances of every other branch at the node. With
    no other branch the node is an open line end (K = 1, T = 2).
    """
    y0 = incoming
    rest = sum(others) if len(others) else 0.0
    total = y0 + rest
    if np.any(np.asarray(total) == 0):
        raise ModelError("singular-node", "total admittance at node is zero")
    K = (y0 - rest) / total
    T = 2.0 * y0 / total
    return CoefficientPair(_collapse(K), _collapse(T))


def fault_coefficients(zs: float, r_f: float) -> CoefficientPair:
    """Coefficients at the fault point for a line of surge impedance ``zs``.

    The node joins two identical line halves and the ground branch
    ``1/R_f``: reflection ``-zs/(zs + 2 R_f)``, transmission ``2 R_f/(zs + 2 R_f)``.
    """
    if r_f < 0:
        raise ModelError("bad-resistance", f"fault resistance must be >= 0, got {r_f}")
    if not zs > 0:
        raise ModelError("bad-impedance", f"surge impedance must be > 0, got {zs}")
    if r_f == 0:
        return CoefficientPair(-1.0, 0.0)
    K = -zs / (zs + 2.0 * r_f)
    T = 2.0 * r_f / (zs + 2.0 * r_f)
    return CoefficientPair(K, T)


def fault_factor(zs: float, r_f: float, m_k: int, m_t: int) -> float:
    """Product of the fault coefficients seen by one path.

    The initial surge counts as one reflection, so the factor is
    ``K_f^(1 + m_k) * T_f^m_t``.
    """
    c = fault_coefficients(zs, r_f)
    return c.K ** (1 + m_k) * c.T ** m_t


def fault_factor_log_derivative(zs: float, r_f: float, m_k: int, m_t: int) -> float:
    """``d/dR_f`` of ``log |K_f^(1+m_k) T_f^m_t|``.

    With ``K_f = -zs/(zs + 2R)`` and ``T_f = 2R/(zs + 2R)`` this is
    ``-(1 + m_k) 2/(zs + 2R) + m_t zs/(R (zs + 2R))``, i.e.
    ``-[(1 + m_k) T_f + m_t K_f] / R``.
    """
    if r_f <= 0:
        raise ModelError("gradient-singularity", "R_f derivative is singular at R_f = 0")
    c = fault_coefficients(zs, r_f)
    return -((1 + m_k) * c.T + m_t * c.K) / r_f


def initial_surge(v_bf: float, t_f: float, zs: float, r_f: float) -> StepSurge:
    return StepSurge(fault_coefficients(zs, r_f).K * v_bf, t_f)


class NodeCoefficients:
    """Coefficient cache for every (incoming edge, node) pair of a faulted graph.

    The fault node is excluded: its coefficients depend on ``R_f`` and are
    handled as scalar factors by the wave model.
    """

    def __init__(self, fg: FaultedGraph, s: np.ndarray):
        self.fg = fg
        self.s = np.asarray(s, dtype=complex)
        self._y: dict[str, object] = {}
        self._cache: dict[tuple[str, str], CoefficientPair] = {}

    def admittance(self, edge_id: str):
        if edge_id not in self._y:
            self._y[edge_id] = _collapse(line_admittance(self.fg.segment(edge_id), self.s))
        return self._y[edge_id]

    def _branches(self, node: str):
        ys = [(eid, self.admittance(eid)) for _, eid in self.fg.neighbors(node)]
        if self.fg.node_kind(node) == STATION:
            ys.append((None, _collapse(mmc_admittance(self.fg.base.node(node).station, self.s))))
        return ys

    def pair(self, edge_id: str, node: str) -> CoefficientPair:
        key = (edge_id, node)
        if key not in self._cache:
            if self.fg.node_kind(node) == FAULT:
                raise ModelError("fault-node", "fault coefficients depend on R_f; use fault_coefficients")
            branches = self._branches(node)
            y0 = next(y for eid, y in branches if eid == edge_id)
            others = [y for eid, y in branches if eid != edge_id]
            self._cache[key] = junction_coefficients(y0, others)
        return self._cache[key]

    def reflection(self, edge_id: str, node: str):
        return self.pair(edge_id, node).K

    def transmission(self, edge_id: str, node: str):
        return self.pair(edge_id, node).T

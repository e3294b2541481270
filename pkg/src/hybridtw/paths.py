"""Traveling-wave paths from the fault node to an observation node.

A path *is* its node sequence, so node revisits are allowed and every
reflection produces a distinct path. Enumeration is a best-first search over
the implicit tree of node sequences, keyed on accumulated delay plus the
shortest remaining delay to the target (an exact lower bound, so completed
paths pop in delay order).
"""
from __future__ import annotations

import heapq
import math
from bisect import insort
from dataclasses import dataclass
from typing import Protocol

from .errors import ModelError

DEFAULT_EXPANSION_CAP = 2_000_000
_TOL = 1e-9


class Topology(Protocol):
    fault_node: str | None

    def neighbors(self, node: str) -> tuple[tuple[str, str], ...]: ...
    def is_fault_edge(self, edge_id: str) -> bool: ...
    def edge_length(self, edge_id: str, d_f: float | None = None) -> float: ...
    def speed(self, edge_id: str) -> float: ...


class GainBound(Protocol):
    """Optional amplitude pruning for :func:`enumerate_paths`.

    ``factor`` is the magnitude picked up at ``node`` when a wave arriving on
    ``e_in`` leaves on ``e_out``; ``remaining`` bounds the best magnitude still
    obtainable from that state (including the final transmission); prefixes
    whose bound falls below ``floor`` are dropped.
    """

    floor: float

    def factor(self, e_in: str, node: str, e_out: str) -> float: ...
    def remaining(self, e_in: str, node: str) -> float: ...


class SimpleTopology:
    """Plain undirected graph with a fixed delay per edge (speed 1).

    Useful for hop-unit fixtures and brute-force checks; it has no fault
    edges, so every path delay is independent of ``d_f``.
    """

    fault_node = None

    def __init__(self, edges: dict[str, tuple[str, str, float]]):
        self._delay = {eid: float(d) for eid, (_, _, d) in edges.items()}
        adj: dict[str, list] = {}
        for eid, (a, b, _) in edges.items():
            adj.setdefault(a, []).append((b, eid))
            adj.setdefault(b, []).append((a, eid))
        self._adj = {k: tuple(sorted(v)) for k, v in adj.items()}

    @property
    def nodes(self):
        return tuple(sorted(self._adj))

    def neighbors(self, node):
        return self._adj.get(node, ())

    def is_fault_edge(self, edge_id):
        return False

    def edge_length(self, edge_id, d_f=None):
        return self._delay[edge_id]

    def speed(self, edge_id):
        return 1.0


@dataclass(frozen=True)
class PathBudget:
    tau_max: float | None = None
    n_max: int | None = None

    def __post_init__(self):
        if (self.tau_max is None) == (self.n_max is None):
            raise ModelError("bad-budget", "set exactly one of tau_max and n_max")
        if self.tau_max is not None and not self.tau_max > 0:
            raise ModelError("bad-budget", f"tau_max must be > 0, got {self.tau_max}")
        if self.n_max is not None and self.n_max < 1:
            raise ModelError("bad-budget", f"n_max must be >= 1, got {self.n_max}")


@dataclass(frozen=True)
class Path:
    nodes: tuple[str, ...]
    edges: tuple[str, ...]
    fixed_delay: float  # seconds spent on edges not touching the fault
    m_near: int = 0  # traversals of the split edge of length d_f
    m_far: int = 0  # traversals of the split edge of length L - d_f
    fault_length: float = 0.0
    fault_speed: float = 1.0
    fault_reflections: int = 0  # excluding the initial surge
    fault_transmissions: int = 0

    @property
    def delay_slope(self) -> float:
        """d(delay)/d(d_f) in s/km."""
        return (self.m_near - self.m_far) / self.fault_speed

    def delay(self, d_f: float | None = None) -> float:
        if self.m_near == 0 and self.m_far == 0:
            return self.fixed_delay
        near = self.m_near * d_f
        far = self.m_far * (self.fault_length - d_f)
        return self.fixed_delay + (near + far) / self.fault_speed


def path_delay(path: Path, d_f: float | None = None) -> float:
    """Total propagation delay along ``path`` for fault distance ``d_f``."""
    return path.delay(d_f)


def make_path(topo: Topology, nodes) -> Path:
    nodes = tuple(nodes)
    if len(nodes) < 2:
        raise ModelError("bad-path", "a path needs at least two nodes")
    edges = []
    for a, b in zip(nodes, nodes[1:]):
        eid = next((e for nb, e in topo.neighbors(a) if nb == b), None)
        if eid is None:
            raise ModelError("bad-path", f"no edge between {a!r} and {b!r}")
        edges.append(eid)
    fixed = 0.0
    m_near = m_far = 0
    near = getattr(topo, "near_edge", None)
    for eid in edges:
        if topo.is_fault_edge(eid):
            if eid == near:
                m_near += 1
            else:
                m_far += 1
        else:
            fixed += topo.edge_length(eid) / topo.speed(eid)
    fnode = topo.fault_node
    refl = trans = 0
    if fnode is not None:
        for i in range(1, len(nodes) - 1):
            if nodes[i] == fnode:
                if nodes[i - 1] == nodes[i + 1]:
                    refl += 1
                else:
                    trans += 1
    if m_near or m_far:
        length, speed = topo.length, topo.speed(near)
    else:
        length, speed = 0.0, 1.0
    return Path(nodes, tuple(edges), fixed, m_near, m_far, length, speed, refl, trans)


def _hop(topo: Topology, eid: str, d_f) -> float:
    return topo.edge_length(eid, d_f) / topo.speed(eid)


def _distances_to(topo: Topology, target: str, d_f) -> dict[str, float]:
    dist = {target: 0.0}
    heap = [(0.0, target)]
    while heap:
        d, u = heapq.heappop(heap)
        if d > dist.get(u, math.inf):
            continue
        for v, eid in topo.neighbors(u):
            nd = d + _hop(topo, eid, d_f)
            if nd < dist.get(v, math.inf):
                dist[v] = nd
                heapq.heappush(heap, (nd, v))
    return dist


def enumerate_paths(topo: Topology, source: str, target: str, budget: PathBudget,
                    d_f: float | None = None, max_expansions: int = DEFAULT_EXPANSION_CAP,
                    gain: GainBound | None = None) -> list[Path]:
    """All paths with delay < ``tau_max``, or the ``n_max`` fastest ones.

    With ``gain``, paths that cannot reach ``gain.floor`` are skipped as well.
    The result is sorted by (delay, node sequence).
    """
    if d_f is None:
        d_f = getattr(topo, "d_f", None)
    h = _distances_to(topo, target, d_f)
    if source not in h:
        return []
    tau_max = budget.tau_max
    slack = _TOL * (abs(tau_max) if tau_max is not None else 1.0)
    found: list[tuple[float, tuple[str, ...], Path]] = []
    heap = [(h[source], (source,), 0.0, 1.0, None)]
    pops = 0
    while heap:
        key, nodes, acc, amp, e_last = heapq.heappop(heap)
        if tau_max is not None and key > tau_max + slack:
            break
        if budget.n_max is not None and len(found) >= budget.n_max:
            kth = found[budget.n_max - 1][0]
            if key > kth + _TOL * max(abs(kth), 1e-300):
                break
        pops += 1
        if pops > max_expansions:
            raise ModelError("path-explosion", f"path search exceeded {max_expansions} expansions")
        last = nodes[-1]
        if last == target and len(nodes) > 1:
            path = make_path(topo, nodes)
            tau = path.delay(d_f)
            if tau_max is None or tau < tau_max:
                insort(found, (tau, nodes, path), key=lambda r: (r[0], r[1]))
        for nb, eid in topo.neighbors(last):
            nacc = acc + _hop(topo, eid, d_f)
            nkey = nacc + h.get(nb, math.inf)
            if nkey == math.inf or (tau_max is not None and nkey > tau_max + slack):
                continue
            namp = amp
            if gain is not None:
                if e_last is not None:
                    namp = amp * gain.factor(e_last, last, eid)
                if namp * gain.remaining(eid, nb) < gain.floor:
                    continue
            heapq.heappush(heap, (nkey, nodes + (nb,), nacc, namp, eid))
    out = [p for _, _, p in found]
    if budget.n_max is not None:
        out = out[: budget.n_max]
    return out

"""Grid graph, fault insertion and the fault-distance convention.

Nodes keep their declaration order; that order decides which endpoint of a
faulted edge the fault distance is measured from (the lower-indexed one).
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Any, Mapping

from .errors import ModelError
from .lineparams import DistributedParams, MmcEquivalent, SegmentClass

STATION = "station"
JUNCTION = "junction"
FAULT = "fault"
NODE_KINDS = (STATION, JUNCTION, FAULT)
FAULT_NODE_ID = "qf"


@dataclass(frozen=True)
class NodeSpec:
    id: str
    kind: str = JUNCTION
    station: MmcEquivalent | None = None


@dataclass(frozen=True)
class EdgeSpec:
    id: str
    a: str
    b: str
    length: float  # km
    segment_class: str
    step_table: str | None = None  # None: ideal (distortion-free) segment
    rho: float | None = None  # soil resistivity, ohm*m, for tables with a resistivity axis

    def other(self, node: str) -> str:
        return self.b if node == self.a else self.a


@dataclass(frozen=True)
class GridGraph:
    nodes: tuple[NodeSpec, ...]
    edges: tuple[EdgeSpec, ...]
    classes: Mapping[str, SegmentClass]
    tables: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "_order", {n.id: k for k, n in enumerate(self.nodes)})
        object.__setattr__(self, "_nodes", {n.id: n for n in self.nodes})
        object.__setattr__(self, "_edges", {e.id: e for e in self.edges})
        pairs = {}
        for e in self.edges:
            pairs[frozenset((e.a, e.b))] = e.id
        object.__setattr__(self, "_pairs", pairs)

    def order(self, node_id: str) -> int:
        return self._order[node_id]

    def node(self, node_id: str) -> NodeSpec:
        return self._nodes[node_id]

    def edge(self, edge_id: str) -> EdgeSpec:
        try:
            return self._edges[edge_id]
        except KeyError:
            raise ModelError("unknown-edge", f"edge {edge_id!r} is not in the grid") from None

    def has_edge(self, edge_id: str) -> bool:
        return edge_id in self._edges

    def edge_between(self, a: str, b: str) -> str | None:
        return self._pairs.get(frozenset((a, b)))

    def incident(self, node_id: str) -> list[EdgeSpec]:
        return [e for e in self.edges if node_id in (e.a, e.b)]

    def segment(self, edge_id: str) -> SegmentClass:
        return self.classes[self.edge(edge_id).segment_class]


@dataclass(frozen=True)
class FaultParams:
    t_f: float  # s
    e_f: str
    d_f: float  # km, from the lower-indexed endpoint
    R_f: float  # ohm
    V_bf: float  # V

    def replace(self, **kw) -> "FaultParams":
        vals = dict(t_f=self.t_f, e_f=self.e_f, d_f=self.d_f, R_f=self.R_f, V_bf=self.V_bf)
        vals.update(kw)
        return FaultParams(**vals)


@dataclass(frozen=True)
class FaultedGraph:
    """Base grid with edge ``edge_id`` split by the fault node.

    Only the near-side length ``d_f`` is stored; the far side is always
    ``length - d_f`` so the two halves add up to the original length exactly.
    """

    base: GridGraph
    edge_id: str
    near: str  # lower-indexed endpoint; its split edge has length d_f
    far: str
    d_f: float
    fault_node: str = FAULT_NODE_ID

    def __post_init__(self):
        adj: dict[str, list[tuple[str, str]]] = {n.id: [] for n in self.base.nodes}
        adj[self.fault_node] = []
        for e in self.base.edges:
            if e.id == self.edge_id:
                continue
            adj[e.a].append((e.b, e.id))
            adj[e.b].append((e.a, e.id))
        adj[self.near].append((self.fault_node, self.near_edge))
        adj[self.far].append((self.fault_node, self.far_edge))
        adj[self.fault_node] = [(self.near, self.near_edge), (self.far, self.far_edge)]
        frozen = {k: tuple(sorted(v)) for k, v in adj.items()}
        object.__setattr__(self, "_adj", MappingProxyType(frozen))

    @property
    def length(self) -> float:
        return self.base.edge(self.edge_id).length

    @property
    def near_edge(self) -> str:
        return f"{self.edge_id}/{self.near}"

    @property
    def far_edge(self) -> str:
        return f"{self.edge_id}/{self.far}"

    @property
    def nodes(self) -> tuple[str, ...]:
        return tuple(n.id for n in self.base.nodes) + (self.fault_node,)

    @property
    def edge_ids(self) -> tuple[str, ...]:
        kept = tuple(e.id for e in self.base.edges if e.id != self.edge_id)
        return kept + (self.near_edge, self.far_edge)

    def neighbors(self, node: str) -> tuple[tuple[str, str], ...]:
        """``(neighbor, edge_id)`` pairs sorted by neighbor id."""
        return self._adj[node]

    def is_fault_edge(self, edge_id: str) -> bool:
        return edge_id in (self.near_edge, self.far_edge)

    def base_edge(self, edge_id: str) -> EdgeSpec:
        if self.is_fault_edge(edge_id):
            return self.base.edge(self.edge_id)
        return self.base.edge(edge_id)

    def edge_length(self, edge_id: str, d_f: float | None = None) -> float:
        d = self.d_f if d_f is None else d_f
        if edge_id == self.near_edge:
            return d
        if edge_id == self.far_edge:
            return self.length - d
        return self.base.edge(edge_id).length

    def segment(self, edge_id: str) -> SegmentClass:
        return self.base.classes[self.base_edge(edge_id).segment_class]

    def speed(self, edge_id: str) -> float:
        return self.segment(edge_id).speed

    def table(self, edge_id: str):
        name = self.base_edge(edge_id).step_table
        return None if name is None else self.base.tables[name]

    def node_kind(self, node: str) -> str:
        if node == self.fault_node:
            return FAULT
        return self.base.node(node).kind

    def with_distance(self, d_f: float) -> "FaultedGraph":
        _check_distance(d_f, self.length)
        return FaultedGraph(self.base, self.edge_id, self.near, self.far, d_f, self.fault_node)


def _as_class(name: str, raw) -> SegmentClass:
    if isinstance(raw, SegmentClass):
        return raw
    raw = dict(raw)
    params = DistributedParams(
        R=float(raw["R"]), L=float(raw["L"]), C=float(raw["C"]), G=float(raw.get("G", 0.0)),
        reference_frequency=float(raw.get("reference_frequency", 1e3)),
    )
    return SegmentClass(name=name, kind=raw["kind"], params=params, zs_mode=raw.get("zs_mode"))


def _as_station(raw) -> MmcEquivalent:
    if isinstance(raw, MmcEquivalent):
        return raw
    return MmcEquivalent(R=float(raw["R"]), L=float(raw["L"]), C=float(raw["C"]))


def build_grid(spec: Mapping[str, Any]) -> GridGraph:
    """Validate a structured grid description and build the graph.

    ``spec`` holds ``nodes`` and ``edges`` (lists of mappings), and the
    catalogs ``segment_classes``, ``stations`` and ``step_tables``. Catalog
    entries may be raw mappings or already-built objects.
    """
    classes = {k: _as_class(k, v) for k, v in dict(spec.get("segment_classes", {})).items()}
    stations = {k: _as_station(v) for k, v in dict(spec.get("stations", {})).items()}
    tables = dict(spec.get("step_tables", {}))

    nodes: list[NodeSpec] = []
    seen: set[str] = set()
    for raw in spec.get("nodes", []):
        nid = str(raw["id"])
        if nid in seen:
            raise ModelError("duplicate-id", f"node {nid!r} declared twice")
        seen.add(nid)
        kind = raw.get("kind", JUNCTION)
        if kind == FAULT:
            raise ModelError("fault-node-in-base", f"node {nid!r}: fault nodes are inserted, not declared")
        if kind not in NODE_KINDS:
            raise ModelError("unknown-kind", f"node {nid!r}: unknown kind {kind!r}")
        station = raw.get("station")
        if kind == STATION:
            if station is None:
                raise ModelError("missing-station", f"node {nid!r}: station node needs a station entry")
            if isinstance(station, str):
                if station not in stations:
                    raise ModelError("dangling-station", f"node {nid!r} references unknown station {station!r}")
                station = stations[station]
            else:
                station = _as_station(station)
        elif station is not None:
            raise ModelError("unexpected-station", f"node {nid!r}: only station nodes carry a station")
        nodes.append(NodeSpec(nid, kind, station))
    if FAULT_NODE_ID in seen:
        raise ModelError("duplicate-id", f"node id {FAULT_NODE_ID!r} is reserved for the fault node")

    edges: list[EdgeSpec] = []
    edge_ids: set[str] = set()
    pairs: set[frozenset] = set()
    for raw in spec.get("edges", []):
        eid = str(raw["id"])
        if eid in edge_ids:
            raise ModelError("duplicate-id", f"edge {eid!r} declared twice")
        edge_ids.add(eid)
        a, b = (str(x) for x in raw["nodes"])
        for end in (a, b):
            if end not in seen:
                raise ModelError("dangling-node", f"edge {eid!r} references undeclared node {end!r}")
        if a == b:
            raise ModelError("self-loop", f"edge {eid!r} connects {a!r} to itself")
        key = frozenset((a, b))
        if key in pairs:
            raise ModelError("parallel-edge", f"edge {eid!r} duplicates an existing {a}-{b} edge; split it with a junction")
        pairs.add(key)
        length = float(raw["length"])
        if not length > 0:
            raise ModelError("bad-length", f"edge {eid!r} has non-positive length {length}")
        cls = raw.get("class", raw.get("segment_class"))
        if cls not in classes:
            raise ModelError("dangling-class", f"edge {eid!r} references unknown segment class {cls!r}")
        table = raw.get("step_table")
        if table is not None and table not in tables:
            raise ModelError("dangling-table", f"edge {eid!r} references unknown step table {table!r}")
        rho = raw.get("rho")
        edges.append(EdgeSpec(eid, a, b, length, cls, table, None if rho is None else float(rho)))

    if not nodes:
        raise ModelError("empty-grid", "grid has no nodes")
    _check_connected(nodes, edges)
    return GridGraph(tuple(nodes), tuple(edges), MappingProxyType(classes), MappingProxyType(tables))


def _check_connected(nodes, edges):
    adj = {n.id: set() for n in nodes}
    for e in edges:
        adj[e.a].add(e.b)
        adj[e.b].add(e.a)
    start = nodes[0].id
    seen = {start}
    todo = deque([start])
    while todo:
        for nb in adj[todo.popleft()]:
            if nb not in seen:
                seen.add(nb)
                todo.append(nb)
    if len(seen) != len(nodes):
        missing = sorted(set(adj) - seen)
        raise ModelError("disconnected", f"nodes not reachable from {start!r}: {missing}")


def _check_distance(d_f: float, length: float):
    if d_f == 0 or d_f == length:
        raise ModelError("fault-at-node", f"fault distance {d_f} km coincides with a node")
    if not 0 < d_f < length:
        raise ModelError("distance-out-of-range", f"fault distance {d_f} km outside (0, {length})")


def insert_fault(g: GridGraph, e_f: str, d_f: float, R_f: float, t_f: float = 0.0,
                 V_bf: float = 1.0) -> tuple[FaultedGraph, FaultParams]:
    edge = g.edge(e_f)
    _check_distance(d_f, edge.length)
    if R_f < 0:
        raise ModelError("bad-resistance", f"fault resistance must be >= 0, got {R_f}")
    near, far = (edge.a, edge.b) if g.order(edge.a) < g.order(edge.b) else (edge.b, edge.a)
    fg = FaultedGraph(g, e_f, near, far, float(d_f))
    return fg, FaultParams(t_f=float(t_f), e_f=e_f, d_f=float(d_f), R_f=float(R_f), V_bf=float(V_bf))

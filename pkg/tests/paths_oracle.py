"""Exhaustive walk generation used as the path-enumeration oracle."""
from __future__ import annotations

import numpy as np


def random_connected_graph(rng: np.random.Generator, n_nodes: int, max_delay: int = 2):
    """Random simple connected graph; edge delays are whole hop units."""
    nodes = [f"n{k}" for k in range(n_nodes)]
    pairs = set()
    for k in range(1, n_nodes):  # random spanning tree
        pairs.add((nodes[int(rng.integers(k))], nodes[k]))
    for a in range(n_nodes):
        for b in range(a + 1, n_nodes):
            if rng.random() < 0.3:
                pairs.add((nodes[a], nodes[b]))
    uniq = {tuple(sorted(p)) for p in pairs}
    return {f"e{a}{b}": (a, b, int(rng.integers(1, max_delay + 1))) for a, b in sorted(uniq)}


def brute_force_walks(edges, src: str, dst: str, budget: float) -> list[tuple[str, ...]]:
    """Every walk from ``src`` to ``dst`` (at least one edge) with total delay < ``budget``."""
    adj: dict[str, list[tuple[str, float]]] = {}
    for a, b, d in edges.values():
        adj.setdefault(a, []).append((b, d))
        adj.setdefault(b, []).append((a, d))
    out = []

    def walk(nodes, t):
        for nb, d in adj.get(nodes[-1], []):
            if t + d < budget:
                nxt = nodes + (nb,)
                if nb == dst:
                    out.append(nxt)
                walk(nxt, t + d)

    walk((src,), 0.0)
    return out

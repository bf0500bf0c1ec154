"""Mapping order over query nodes.

The first node has maximum degree; every later node maximizes its number of
edges into the already ordered prefix.  Ties go to the higher degree, then
to the lower index, which also restarts disconnected remainders at their
highest-degree node.
"""
from __future__ import annotations

import numpy as np

from .errors import EmptyGraph
from .graph import Graph


def compute_order(gq: Graph) -> tuple[int, ...]:
    n = gq.node_count
    if n == 0:
        raise EmptyGraph("cannot order an empty query graph")
    deg = gq.degrees
    links = np.zeros(n, dtype=np.int64)
    placed = np.zeros(n, dtype=bool)
    order = []
    for _ in range(n):
        best = -1
        for u in range(n):
            if placed[u]:
                continue
            if best < 0 or (links[u], deg[u]) > (links[best], deg[best]):
                best = u
        order.append(best)
        placed[best] = True
        links += gq.adj[best]
    return tuple(order)

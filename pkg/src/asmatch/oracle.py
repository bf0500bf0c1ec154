"""Brute-force exact solver used as ground truth.

Every injective mapping is enumerated in lexicographic order of the image
tuple ``(M(0), M(1), ...)`` and scored; nothing is pruned.  Scoring is
vectorized over chunks of enumerated mappings.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .errors import QueryLargerThanTarget, TooLarge
from .graph import EditCost, Graph, NodeMapping, partial_cost

DEFAULT_LIMIT = 10**7
CHUNK = 1 << 17


@dataclass(frozen=True)
class OracleResult:
    best_cost: EditCost
    best_mapping: NodeMapping
    mappings_enumerated: int


def count_injections(n_free_targets: int, n_free_queries: int) -> int:
    return math.perm(n_free_targets, n_free_queries)


def _solve(gq: Graph, gt: Graph, fixed: NodeMapping, limit: int) -> OracleResult:
    nq, nt = gq.node_count, gt.node_count
    if nq > nt:
        raise QueryLargerThanTarget(f"query has {nq} nodes, target only {nt}")
    free_q = [u for u in range(nq) if not fixed.has_query(u)]
    free_t = [v for v in range(nt) if not fixed.has_target(v)]
    total = count_injections(len(free_t), len(free_q))
    if total > limit:
        raise TooLarge(f"{total} mappings exceed the enumeration limit {limit}")

    base = fixed.as_array(nq)
    if not free_q:
        return OracleResult(partial_cost(fixed, gq, gt), NodeMapping.from_array(base), 1)

    k = len(free_q)
    free_q_arr = np.array(free_q, dtype=np.int64)
    # fixed-only terms are identical for every completion
    ea, eb = (gq.edges[:, 0], gq.edges[:, 1]) if gq.edge_count else (np.zeros(0, int), np.zeros(0, int))
    fixed_pairs = fixed.pairs

    best_total, best_row, best_node, best_edge = None, None, 0, 0
    perms = itertools.permutations(free_t, k)
    while True:
        flat = np.fromiter(itertools.chain.from_iterable(itertools.islice(perms, CHUNK)), dtype=np.int64)
        if flat.size == 0:
            break
        rows = flat.reshape(-1, k)
        images = np.broadcast_to(base, (rows.shape[0], nq)).copy()
        images[:, free_q_arr] = rows
        node = np.count_nonzero(gq.labels[None, :] != gt.labels[images], axis=1)
        edge = np.zeros(rows.shape[0], dtype=np.int64)
        for a, b in zip(ea, eb):
            edge += ~gt.adj[images[:, a], images[:, b]]
        cost = node + edge
        i = int(np.argmin(cost))
        if best_total is None or cost[i] < best_total:
            best_total = int(cost[i])
            best_row = images[i].copy()
            best_node, best_edge = int(node[i]), int(edge[i])
    best = NodeMapping(list(fixed_pairs) + [(u, int(best_row[u])) for u in free_q])
    return OracleResult(EditCost(best_node, best_edge), best, total)


def exact_asm(gq: Graph, gt: Graph, limit: int = DEFAULT_LIMIT) -> OracleResult:
    """Minimum edit-distance mapping of ``gq`` into ``gt`` by enumeration."""
    return _solve(gq, gt, NodeMapping(), limit)


def min_completion(gq: Graph, gt: Graph, mapping: NodeMapping, limit: int = DEFAULT_LIMIT) -> OracleResult:
    """Best complete extension of ``mapping`` (its pairs stay fixed)."""
    return _solve(gq, gt, mapping, limit)


def min_completion_cost(state, limit: int = DEFAULT_LIMIT) -> int:
    """Optimal total cost over all completions of a search state's mapping."""
    return min_completion(state.gq, state.gt, state.mapping, limit).best_cost.total

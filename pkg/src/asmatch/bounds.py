"""Admissible lower bound on the best completion of a partial mapping.

For a state extended by ``u -> v`` the bound is the exact cost already
determined by the extended mapping plus a lookahead over the query nodes
still unmapped.  The ``label`` lookahead charges one for every such node
whose label no longer occurs among the free target nodes.  The default
``neighborhood`` lookahead (see :func:`neighborhood_lookahead`) also charges
edges those nodes must break.
"""
from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .env import Action, SearchState, _check
from .graph import Graph, partial_cost

BOUND_KINDS = ("label", "neighborhood")
DEFAULT_BOUND = "neighborhood"


def step_terms(gq: Graph, gt: Graph, order: Sequence[int], depth: int,
               img: np.ndarray, used: np.ndarray, cands: np.ndarray, kind: str = "label"):
    """Per-candidate pieces of the bound for mapping ``order[depth]``.

    ``img`` is the query-indexed image array (-1 when unmapped) and ``used``
    marks mapped targets.  Returns ``(node, edge, lookahead)`` arrays aligned
    with ``cands``: the new label mismatch, the newly broken query edges and
    the label lookahead after the candidate is consumed.
    """
    u = order[depth]
    cand_labels = gt.labels[cands]
    node = (cand_labels != gq.labels[u]).astype(np.int64)

    imgs = img[gq.neighbors(u)]
    imgs = imgs[imgs >= 0]
    if imgs.size:
        present = gt.adj[np.ix_(imgs, cands)].sum(axis=0)
        edge = imgs.size - present.astype(np.int64)
    else:
        edge = np.zeros(len(cands), dtype=np.int64)

    if kind == "neighborhood":
        return node, edge, neighborhood_lookahead(gq, gt, order, depth, img, used, cands)
    if kind != "label":
        raise ValueError(f"unknown bound kind {kind!r}")
    rest = np.asarray(order[depth + 1:], dtype=np.int64)
    if rest.size:
        width = max(gq.num_labels, gt.num_labels)
        free_count = np.bincount(gt.labels[~used], minlength=width)
        need = np.bincount(gq.labels[rest], minlength=width)
        look = int(need[free_count == 0].sum()) + need[cand_labels] * (free_count[cand_labels] == 1)
    else:
        look = np.zeros(len(cands), dtype=np.int64)
    return node, edge, np.asarray(look, dtype=np.int64) + np.zeros(len(cands), dtype=np.int64)


def neighborhood_lookahead(gq: Graph, gt: Graph, order: Sequence[int], depth: int,
                           img: np.ndarray, used: np.ndarray, cands: np.ndarray) -> np.ndarray:
    """Lookahead that also charges edges into the mapped part.

    Every query node ``w`` left unmapped after ``u -> v`` independently takes
    its cheapest free target ``x != v``, paying its label mismatch, one per
    mapped neighbor ``y`` (``v`` included when ``w ~ u``) with ``M(y)`` not
    adjacent to ``x``, and half of ``max(0, k_w - j_x)``: ``w`` has ``k_w``
    unmapped neighbors but ``x`` only ``j_x`` free ones, so that many edges
    among unmapped nodes break, each counted from both ends.  Injectivity is
    relaxed, so the sum never exceeds the true completion cost.
    """
    rest = np.asarray(order[depth + 1:], dtype=np.int64)
    if rest.size == 0:
        return np.zeros(len(cands), dtype=np.int64)
    u = order[depth]
    free = np.flatnonzero(~used)
    cost = (gq.labels[rest][:, None] != gt.labels[free][None, :]).astype(np.int64)
    mapped_q = np.flatnonzero(img >= 0)
    if mapped_q.size:
        links = gq.adj[np.ix_(rest, mapped_q)].astype(np.int64)
        missing = (~gt.adj[np.ix_(img[mapped_q], free)]).astype(np.int64)
        cost += links @ missing
    # doubled units so the half-edge deficit stays integral
    k = gq.adj[np.ix_(rest, rest)].sum(axis=1)
    j = gt.degrees[free] - gt.adj[np.ix_(free, np.flatnonzero(used))].sum(axis=1)
    cost = 2 * cost + np.maximum(k[:, None] - j[None, :], 0)

    pos = np.searchsorted(free, cands)
    big = np.iinfo(np.int64).max // 4
    near_u = gq.adj[u, rest]
    total = np.zeros(len(cands), dtype=np.int64)
    far = cost[~near_u]
    if far.shape[0]:
        if far.shape[1] > 1:
            two = np.partition(far, 1, axis=1)
            m1, m2 = two[:, 0], two[:, 1]
        else:
            m1 = far[:, 0]
            m2 = np.full(far.shape[0], big)
        ties = (far == m1[:, None]).sum(axis=1)
        at_v = far[:, pos]
        alone = (at_v == m1[:, None]) & (ties[:, None] == 1)
        total += np.where(alone, m2[:, None], m1[:, None]).sum(axis=0)
    near = cost[near_u]
    if near.shape[0]:
        broken = 2 * (~gt.adj[np.ix_(cands, free)]).astype(np.int64)
        broken[np.arange(len(cands)), pos] = big
        for row in near:
            total += (row[None, :] + broken).min(axis=1)
    return (total + 1) // 2


def state_arrays(state: SearchState):
    img = state.mapping.as_array(state.gq.node_count)
    used = np.zeros(state.gt.node_count, dtype=bool)
    used[img[img >= 0]] = True
    return img, used


def lower_bounds(state: SearchState, actions: Sequence[Action], kind: str = DEFAULT_BOUND) -> np.ndarray:
    """Bounds for every action of ``state`` (all must share the next query node)."""
    img, used = state_arrays(state)
    cands = np.array([a.target_node for a in actions], dtype=np.int64)
    node, edge, look = step_terms(state.gq, state.gt, state.order, state.depth, img, used, cands, kind)
    base = partial_cost(state.mapping, state.gq, state.gt).total
    return base + node + edge + look


def lower_bound(state: SearchState, a: Action, kind: str = DEFAULT_BOUND) -> int:
    _check(state, a)
    return int(lower_bounds(state, [a], kind)[0])


def prune_actions(actions: Sequence, bounds: Sequence[float], curr_best: float = math.inf) -> list:
    """Keep actions whose bound is strictly below the incumbent cost, in order."""
    if len(actions) != len(bounds):
        raise ValueError("actions and bounds must be parallel")
    return [a for a, b in zip(actions, bounds) if b < curr_best]

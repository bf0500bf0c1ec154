"""Depth-first branch-and-bound over node-pair assignments.

Each stack frame is one search state: the images of ``order[:depth]``.  On
every visit the frame's candidate targets are bounded, candidates whose
bound cannot beat the incumbent (or that were already tried from this frame)
are dropped, and the policy's top remaining candidate is descended into.
A frame with nothing left is popped, which is the backtrack.

Bounds and policy scores of visited frames are cached by image sequence and
the whole cache is dropped whenever the incumbent improves.  Which children
a frame has already tried lives in the frame, not in the cache, so turning
the cache off changes only the amount of recomputation.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .bounds import DEFAULT_BOUND, step_terms
from .env import Action, SearchState, initial_state
from .errors import BudgetError, QueryLargerThanTarget
from .graph import EditCost, Graph, NodeMapping


@dataclass(frozen=True)
class SearchBudget:
    wall_clock_limit: float | None = None
    max_expansions: int | None = None

    def __post_init__(self):
        if self.wall_clock_limit is None and self.max_expansions is None:
            raise BudgetError("a search budget needs a time or an expansion limit")
        if self.wall_clock_limit is not None and not self.wall_clock_limit > 0:
            raise BudgetError("wall_clock_limit must be positive")
        if self.max_expansions is not None and self.max_expansions <= 0:
            raise BudgetError("max_expansions must be positive")


@dataclass
class SearchResult:
    best_mapping: NodeMapping
    best_cost: EditCost
    first_round_cost: EditCost
    expansions: int
    exhausted: bool
    time_to_best: float
    expansions_to_best: int
    elapsed: float
    # (seconds, expansions, total cost) at every incumbent improvement
    trace: list = field(default_factory=list)

    def time_to_cost(self, cost: int) -> float:
        """Seconds until the incumbent first reached ``cost`` or better."""
        for t, _, c in self.trace:
            if c <= cost:
                return t
        return math.inf

    def to_dict(self) -> dict:
        return {
            "best_cost": self.best_cost.as_dict(),
            "first_round_cost": self.first_round_cost.as_dict(),
            "mapping": [list(p) for p in self.best_mapping.pairs],
            "expansions": self.expansions,
            "expansions_to_best": self.expansions_to_best,
            "exhausted": self.exhausted,
            "time_to_best": self.time_to_best,
            "elapsed": self.elapsed,
        }


class _Frame:
    __slots__ = ("key", "img", "used", "node_cost", "edge_cost", "tried")

    def __init__(self, key, img, used, node_cost, edge_cost):
        self.key = key
        self.img = img
        self.used = used
        self.node_cost = node_cost
        self.edge_cost = edge_cost
        self.tried = np.zeros(used.shape[0], dtype=bool)


def branch_and_bound(gq: Graph, gt: Graph, policy, budget: SearchBudget,
                     cache_enabled: bool = True, order: Sequence[int] | None = None,
                     pruning: bool = True, bound: str = DEFAULT_BOUND, observer: Callable | None = None,
                     clock: Callable[[], float] = time.monotonic) -> SearchResult:
    """Search for a minimum edit-distance mapping of ``gq`` into ``gt``.

    The budget only applies once the first complete mapping exists, so a
    result is always returned.  ``observer(state, actions, bounds)`` is
    called whenever a frame's bounds are computed.
    """
    if gq.node_count > gt.node_count:
        raise QueryLargerThanTarget(f"query has {gq.node_count} nodes, target only {gt.node_count}")
    root = initial_state(gq, gt, order)
    order = root.order
    nq, nt = gq.node_count, gt.node_count
    start = clock()

    cache: dict = {}
    best_cost: EditCost | None = None
    best_total = math.inf
    best_key: tuple = ()
    first_round: EditCost | None = None
    time_to_best = 0.0
    exp_to_best = 0
    trace = []
    expansions = 0
    exhausted = True

    def state_of(frame: _Frame) -> SearchState:
        return SearchState(gq, gt, order, NodeMapping(zip(order, frame.key)))

    def evaluate(frame: _Frame):
        depth = len(frame.key)
        cands = np.flatnonzero(~frame.used)
        node, edge, look = step_terms(gq, gt, order, depth, frame.img, frame.used, cands, bound)
        bounds = frame.node_cost + frame.edge_cost + node + edge + look
        state = None
        if observer is not None or policy.needs_state:
            state = state_of(frame)
        actions = None
        if observer is not None or policy.needs_state:
            u = order[depth]
            actions = [Action(u, int(v)) for v in cands]
        if observer is not None:
            observer(state, actions, bounds)
        scores = np.asarray(policy.scores(state, actions, bounds), dtype=np.float64)
        return cands, node, edge, bounds, scores

    if nq == 0:
        empty = EditCost(0, 0)
        return SearchResult(NodeMapping(), empty, empty, 0, True, 0.0, 0, 0.0, [(0.0, 0, 0)])

    stack = [_Frame((), np.full(nq, -1, dtype=np.int64), np.zeros(nt, dtype=bool), 0, 0)]
    while stack:
        frame = stack[-1]
        entry = cache.get(frame.key) if cache_enabled else None
        if entry is None:
            entry = evaluate(frame)
            if cache_enabled:
                cache[frame.key] = entry
        cands, node, edge, bounds, scores = entry

        keep = ~frame.tried[cands]
        if pruning:
            keep &= bounds < best_total
        if not keep.any():
            stack.pop()
            continue

        if first_round is not None:
            if budget.max_expansions is not None and expansions >= budget.max_expansions:
                exhausted = False
                break
            if budget.wall_clock_limit is not None and clock() - start >= budget.wall_clock_limit:
                exhausted = False
                break

        idx = np.flatnonzero(keep)
        pick = int(idx[np.argmax(scores[idx])])
        v = int(cands[pick])
        frame.tried[v] = True
        expansions += 1

        depth = len(frame.key)
        key = frame.key + (v,)
        node_cost = frame.node_cost + int(node[pick])
        edge_cost = frame.edge_cost + int(edge[pick])
        if depth + 1 == nq:
            cost = EditCost(node_cost, edge_cost)
            if first_round is None:
                first_round = cost
            if cost.total < best_total:
                best_total = cost.total
                best_cost = cost
                best_key = key
                time_to_best = clock() - start
                exp_to_best = expansions
                trace.append((time_to_best, expansions, best_total))
                cache.clear()
            continue

        img = frame.img.copy()
        img[order[depth]] = v
        used = frame.used.copy()
        used[v] = True
        stack.append(_Frame(key, img, used, node_cost, edge_cost))

    elapsed = clock() - start
    return SearchResult(
        best_mapping=NodeMapping(zip(order, best_key)),
        best_cost=best_cost,
        first_round_cost=first_round,
        expansions=expansions,
        exhausted=exhausted,
        time_to_best=time_to_best,
        expansions_to_best=exp_to_best,
        elapsed=elapsed,
        trace=trace,
    )

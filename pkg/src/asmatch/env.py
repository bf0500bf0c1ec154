"""Search states, actions and rewards of the node-pair selection MDP.

A state holds both graphs, the fixed mapping order and the current partial
mapping; the next query node is always ``order[depth]``, so an action only
chooses its target.  Rewards are +1/-1 for a label match/mismatch plus
(#preserved - #broken) query edges closed by the new pair, which makes an
undiscounted episode return an affine function of the final edit distance.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .errors import IllegalAction, QueryLargerThanTarget, TerminalState
from .graph import Graph, NodeMapping, ged
from .ordering import compute_order


class Action(NamedTuple):
    query_node: int
    target_node: int


@dataclass(frozen=True)
class Reward:
    node_part: int
    edge_part: int

    @property
    def total(self) -> int:
        return self.node_part + self.edge_part


@dataclass(frozen=True, eq=False)
class SearchState:
    gq: Graph
    gt: Graph
    order: tuple[int, ...]
    mapping: NodeMapping = field(default_factory=NodeMapping)

    @property
    def depth(self) -> int:
        return len(self.mapping)

    @property
    def is_terminal(self) -> bool:
        return self.depth == self.gq.node_count

    @property
    def next_query(self) -> int:
        if self.is_terminal:
            raise TerminalState("all query nodes are mapped")
        return self.order[self.depth]

    def key(self) -> tuple[int, ...]:
        """Image sequence in mapping order; identifies the state for a fixed pair."""
        return self.mapping.target_nodes()


def initial_state(gq: Graph, gt: Graph, order: Sequence[int] | None = None) -> SearchState:
    if gq.node_count > gt.node_count:
        raise QueryLargerThanTarget(f"query has {gq.node_count} nodes, target only {gt.node_count}")
    order = tuple(compute_order(gq) if order is None else (int(u) for u in order))
    if sorted(order) != list(range(gq.node_count)):
        raise ValueError("order must be a permutation of the query nodes")
    return SearchState(gq, gt, order)


def free_targets(state: SearchState) -> np.ndarray:
    used = np.zeros(state.gt.node_count, dtype=bool)
    for v in state.mapping.target_nodes():
        used[v] = True
    return np.flatnonzero(~used)


def action_space(state: SearchState) -> list[Action]:
    u = state.next_query
    return [Action(u, int(v)) for v in free_targets(state)]


def _check(state: SearchState, a: Action) -> None:
    if state.is_terminal:
        raise TerminalState("all query nodes are mapped")
    if a.query_node != state.order[state.depth]:
        raise IllegalAction(f"expected query node {state.order[state.depth]}, got {a.query_node}")
    if not 0 <= a.target_node < state.gt.node_count:
        raise IllegalAction(f"target node {a.target_node} out of range")
    if state.mapping.has_target(a.target_node):
        raise IllegalAction(f"target node {a.target_node} is already mapped")


def apply_action(state: SearchState, a: Action) -> SearchState:
    _check(state, a)
    return SearchState(state.gq, state.gt, state.order, state.mapping.extend(a.query_node, a.target_node))


def reward(state: SearchState, a: Action) -> Reward:
    _check(state, a)
    gq, gt = state.gq, state.gt
    u, v = a
    node_part = 1 if gq.labels[u] == gt.labels[v] else -1
    plus = minus = 0
    for w in gq.neighbors(u):
        img = state.mapping.target_of(int(w))
        if img is None:
            continue
        if gt.adj[v, img]:
            plus += 1
        else:
            minus += 1
    return Reward(node_part, plus - minus)


def discounted_returns(rewards: Sequence[float], gamma: float) -> np.ndarray:
    out = np.zeros(len(rewards))
    acc = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        acc = rewards[t] + gamma * acc
        out[t] = acc
    return out


@dataclass
class Trajectory:
    states: list[SearchState]
    actions: list[Action]
    rewards: list[Reward]
    action_space_sizes: list[int]
    final: SearchState
    gamma: float

    @property
    def mapping(self) -> NodeMapping:
        return self.final.mapping

    @property
    def returns(self) -> np.ndarray:
        return discounted_returns([r.total for r in self.rewards], self.gamma)

    def records(self) -> list[dict]:
        return [
            {"depth": s.depth, "action": [a.query_node, a.target_node], "reward": r.total,
             "node_reward": r.node_part, "edge_reward": r.edge_part, "action_space_size": k}
            for s, a, r, k in zip(self.states, self.actions, self.rewards, self.action_space_sizes)
        ]


def dump_trajectories(trajectories, path) -> None:
    """Write one JSON line per episode holding its step records."""
    with open(path, "w", encoding="utf-8") as fh:
        for i, traj in enumerate(trajectories):
            fh.write(json.dumps({"episode": i, "steps": traj.records(),
                                 "cost": ged(traj.mapping, traj.final.gq, traj.final.gt).total}) + "\n")


def select_action(scores: np.ndarray, rng: np.random.Generator | None, greedy: bool) -> int:
    """Index into the action list: argmax (first on ties) or a sample."""
    if greedy:
        return int(np.argmax(scores))
    p = np.asarray(scores, dtype=np.float64)
    return int(rng.choice(len(p), p=p / p.sum()))


def rollout_episode(gq: Graph, gt: Graph, policy, rng: np.random.Generator | None = None,
                    greedy: bool = False, gamma: float = 0.99,
                    order: Sequence[int] | None = None) -> Trajectory:
    """One backtrack-free descent from the empty mapping to a complete one.

    ``policy.scores(state, actions)`` must return probabilities when
    ``greedy`` is false; with ``greedy`` the argmax is taken and ties go to
    the lowest target index.
    """
    if not greedy and rng is None:
        raise ValueError("sampling rollouts need an rng")
    state = initial_state(gq, gt, order)
    states, actions, rewards, sizes = [], [], [], []
    while not state.is_terminal:
        acts = action_space(state)
        scores = np.asarray(policy.scores(state, acts), dtype=np.float64)
        a = acts[select_action(scores, rng, greedy)]
        states.append(state)
        actions.append(a)
        rewards.append(reward(state, a))
        sizes.append(len(acts))
        state = apply_action(state, a)
    return Trajectory(states, actions, rewards, sizes, state, gamma)

import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from asmatch.env import (Action, Reward, action_space, apply_action, discounted_returns,
                         dump_trajectories, initial_state, reward, rollout_episode)
from asmatch.errors import IllegalAction, QueryLargerThanTarget, TerminalState
from asmatch.graph import ged
from asmatch.policies import RandomPolicy, UniformPolicy

from conftest import random_graph


def test_action_space_examples(Q3, T4):
    s = initial_state(Q3, T4)
    assert action_space(s) == [Action(0, v) for v in range(4)]
    s1 = apply_action(s, Action(0, 0))
    acts = action_space(s1)
    assert len(acts) == 3 and all(a.query_node == 1 for a in acts)
    assert [a.target_node for a in acts] == [1, 2, 3]


def test_terminal_state(Q3, T4):
    s = initial_state(Q3, T4)
    for v in range(3):
        s = apply_action(s, Action(v, v))
    assert s.is_terminal
    with pytest.raises(TerminalState):
        action_space(s)


def test_apply_is_pure(Q3, T4):
    s = initial_state(Q3, T4)
    a = apply_action(s, Action(0, 1))
    b = apply_action(s, Action(0, 1))
    assert s.depth == 0 and a.depth == 1
    assert a.mapping == b.mapping


def test_illegal_actions(Q3, T4):
    s = apply_action(initial_state(Q3, T4), Action(0, 0))
    with pytest.raises(IllegalAction):
        apply_action(s, Action(1, 0))
    with pytest.raises(IllegalAction):
        apply_action(s, Action(2, 1))
    with pytest.raises(IllegalAction):
        reward(s, Action(1, 0))
    with pytest.raises(QueryLargerThanTarget):
        initial_state(T4, Q3)


def test_reward_one_kept_one_broken_edge(Q3, T4):
    s = apply_action(apply_action(initial_state(Q3, T4), Action(0, 0)), Action(1, 3))
    r = reward(s, Action(2, 1))
    assert r.edge_part == 0


def test_reward_closing_triangle(Q3, T4):
    s = apply_action(apply_action(initial_state(Q3, T4), Action(0, 0)), Action(1, 1))
    r = reward(s, Action(2, 2))
    assert r == Reward(1, 2) and r.total == 3


def test_first_action_has_no_edge_reward(Q3, T4):
    s = initial_state(Q3, T4)
    for a in action_space(s):
        assert reward(s, a).edge_part == 0


def test_discounted_returns():
    assert discounted_returns([1, 2, 3], 1.0).tolist() == [6, 5, 3]
    assert discounted_returns([1, 2, 3], 0.0).tolist() == [1, 2, 3]
    assert discounted_returns([1, 1], 0.5).tolist() == [1.5, 1.0]


def test_greedy_uniform_rollout_takes_lowest_targets(Q3, T4):
    traj = rollout_episode(Q3, T4, UniformPolicy(), greedy=True)
    assert [a.target_node for a in traj.actions] == [0, 1, 2]
    assert len(traj.actions) == 3


def test_trajectory_dump(tmp_path, Q3, T4):
    traj = rollout_episode(Q3, T4, UniformPolicy(), rng=np.random.default_rng(0))
    path = tmp_path / "traj.jsonl"
    dump_trajectories([traj], path)
    doc = json.loads(path.read_text().splitlines()[0])
    assert [r["action_space_size"] for r in doc["steps"]] == [4, 3, 2]
    assert doc["cost"] == ged(traj.mapping, Q3, T4).total


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_reward_ged_identity(seed):
    rng = np.random.default_rng(seed)
    gt = random_graph(rng, int(rng.integers(2, 10)))
    gq = random_graph(rng, int(rng.integers(1, gt.node_count + 1)), 0.5)
    traj = rollout_episode(gq, gt, UniformPolicy(), rng=rng, gamma=1.0)
    assert len(traj.actions) == gq.node_count
    c = ged(traj.mapping, gq, gt)
    assert 2 * c.node_cost == gq.node_count - sum(r.node_part for r in traj.rewards)
    assert 2 * c.edge_cost == gq.edge_count - sum(r.edge_part for r in traj.rewards)
    assert traj.returns[0] == pytest.approx(sum(r.total for r in traj.rewards))
    for s, a, r in zip(traj.states, traj.actions, traj.rewards):
        assert abs(r.edge_part) <= gq.degrees[a.query_node]
        assert s.mapping.query_nodes() == s.order[: s.depth]


def test_random_policy_reproducible(Q3, T4):
    s = initial_state(Q3, T4)
    acts = action_space(s)
    assert np.array_equal(RandomPolicy(3).scores(s, acts), RandomPolicy(3).scores(s, acts))
    assert not np.array_equal(RandomPolicy(3).scores(s, acts), RandomPolicy(4).scores(s, acts))

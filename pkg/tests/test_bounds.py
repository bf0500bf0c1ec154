import math

import numpy as np
from hypothesis import given, settings, strategies as st

from asmatch.bounds import lower_bound, lower_bounds, prune_actions
from asmatch.env import Action, action_space, apply_action, initial_state
from asmatch.oracle import min_completion_cost

from conftest import random_instance


def test_examples(Q3, T4):
    s = apply_action(apply_action(initial_state(Q3, T4), Action(0, 0)), Action(1, 1))
    assert lower_bound(s, Action(2, 2)) == 0
    assert lower_bound(initial_state(Q3, T4), Action(0, 3)) >= 1
    assert lower_bound(initial_state(Q3, T4), Action(0, 3), kind="label") >= 1


def test_greedy_root_tie(Q3, T4):
    s = initial_state(Q3, T4)
    lb = lower_bounds(s, action_space(s))
    assert lb[0] == 0 and lb[2] == 0
    assert int(np.argmin(lb)) == 0


def test_prune_actions():
    acts = ["a", "b", "c", "d"]
    assert prune_actions(acts, [3, 1, 2, 5]) == acts
    assert prune_actions(acts, [2, 2, 2, 2], 2) == []
    assert prune_actions(acts, [3, 1, 2, 5], 3) == ["b", "c"]


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_bounds_are_admissible(seed):
    rng = np.random.default_rng(seed)
    gq, gt = random_instance(rng)
    s = initial_state(gq, gt)
    while not s.is_terminal:
        acts = action_space(s)
        for kind in ("label", "neighborhood"):
            lbs = lower_bounds(s, acts, kind)
            for a, lb in zip(acts, lbs):
                assert lb <= min_completion_cost(apply_action(s, a))
        s = apply_action(s, acts[int(rng.integers(len(acts)))])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_neighborhood_bound_dominates_label_bound(seed):
    rng = np.random.default_rng(seed)
    gq, gt = random_instance(rng)
    s = initial_state(gq, gt)
    while not s.is_terminal:
        acts = action_space(s)
        assert np.all(lower_bounds(s, acts, "neighborhood") >= lower_bounds(s, acts, "label"))
        s = apply_action(s, acts[int(rng.integers(len(acts)))])


def test_terminal_bound_is_exact(Q3, T4):
    s = apply_action(apply_action(initial_state(Q3, T4), Action(0, 0)), Action(1, 3))
    for a in action_space(s):
        assert lower_bound(s, a) == min_completion_cost(apply_action(s, a))
    assert prune_actions([1], [0.0], math.inf) == [1]


def test_edges_among_unmapped_nodes_are_charged():
    from asmatch.graph import Graph
    tri = Graph([0, 0, 0], [(0, 1), (1, 2), (0, 2)], num_labels=1)
    empty = Graph([0, 0, 0], [], num_labels=1)
    s = initial_state(tri, empty)
    # two edges to the mapped node plus half of the two endpoints of edge (1, 2)
    assert lower_bound(s, Action(0, 0)) == 3 == min_completion_cost(apply_action(s, Action(0, 0)))
    assert lower_bound(s, Action(0, 0), kind="label") == 0

import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from asmatch.errors import BudgetError, QueryLargerThanTarget
from asmatch.graph import ged
from asmatch.oracle import exact_asm
from asmatch.policies import GreedyLBPolicy, RandomPolicy, UniformPolicy
from asmatch.search import SearchBudget, branch_and_bound

from conftest import random_instance

BIG = SearchBudget(max_expansions=10 ** 7)


def test_canonical_pair_greedy(Q3, T4):
    res = branch_and_bound(Q3, T4, GreedyLBPolicy(), BIG)
    assert res.best_cost.total == 0 and res.exhausted
    assert res.best_mapping.pairs[0] == (0, 0)
    assert res.first_round_cost.total == 0


def test_budget_validation():
    with pytest.raises(BudgetError):
        SearchBudget()
    with pytest.raises(BudgetError):
        SearchBudget(wall_clock_limit=0)
    with pytest.raises(BudgetError):
        SearchBudget(max_expansions=0)


def test_query_larger_than_target(Q3, T4):
    with pytest.raises(QueryLargerThanTarget):
        branch_and_bound(T4, Q3, GreedyLBPolicy(), BIG)


def test_budget_stops_after_first_round():
    rng = np.random.default_rng(0)
    from conftest import random_graph
    gt = random_graph(rng, 40, 0.1, num_labels=2)
    gq = random_graph(rng, 9, 0.4, num_labels=2)
    res = branch_and_bound(gq, gt, RandomPolicy(1), SearchBudget(max_expansions=1))
    assert not res.exhausted
    assert res.expansions == gq.node_count
    assert res.first_round_cost == res.best_cost


def test_fake_clock_stops_search():
    rng = np.random.default_rng(1)
    from conftest import random_graph
    gt = random_graph(rng, 30, 0.1, num_labels=2)
    gq = random_graph(rng, 8, 0.5, num_labels=2)
    ticks = itertools.count()
    res = branch_and_bound(gq, gt, RandomPolicy(0), SearchBudget(wall_clock_limit=50),
                           clock=lambda: float(next(ticks)))
    assert not res.exhausted
    assert res.expansions < 60


POLICIES = {"greedy": GreedyLBPolicy, "random": lambda: RandomPolicy(7), "uniform": UniformPolicy}


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_exhausted_search_matches_oracle(seed):
    rng = np.random.default_rng(seed)
    gq, gt = random_instance(rng)
    opt = exact_asm(gq, gt).best_cost.total
    for make in POLICIES.values():
        res = branch_and_bound(gq, gt, make(), BIG)
        assert res.exhausted
        assert res.best_cost.total == opt
        assert ged(res.best_mapping, gq, gt) == res.best_cost
        assert res.first_round_cost.total >= res.best_cost.total


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_cache_is_transparent(seed):
    rng = np.random.default_rng(seed)
    gq, gt = random_instance(rng, 6, 9)
    for make in POLICIES.values():
        on = branch_and_bound(gq, gt, make(), BIG, cache_enabled=True)
        off = branch_and_bound(gq, gt, make(), BIG, cache_enabled=False)
        assert on.best_cost == off.best_cost
        assert on.best_mapping == off.best_mapping
        assert on.expansions == off.expansions


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_pruning_only_saves_work(seed):
    rng = np.random.default_rng(seed)
    gq, gt = random_instance(rng, 4, 6)
    pruned = branch_and_bound(gq, gt, GreedyLBPolicy(), BIG)
    full = branch_and_bound(gq, gt, GreedyLBPolicy(), BIG, pruning=False)
    assert pruned.best_cost.total == full.best_cost.total
    assert pruned.expansions <= full.expansions


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_incumbent_trace_strictly_improves(seed):
    rng = np.random.default_rng(seed)
    gq, gt = random_instance(rng, 6, 9)
    res = branch_and_bound(gq, gt, RandomPolicy(seed), BIG)
    costs = [c for _, _, c in res.trace]
    times = [t for t, _, _ in res.trace]
    assert all(a > b for a, b in zip(costs, costs[1:]))
    assert times == sorted(times)
    assert costs[0] == res.first_round_cost.total and costs[-1] == res.best_cost.total


def test_random_policy_reproducible_trace():
    rng = np.random.default_rng(5)
    gq, gt = random_instance(rng, 5, 8)
    a = branch_and_bound(gq, gt, RandomPolicy(11), BIG)
    b = branch_and_bound(gq, gt, RandomPolicy(11), BIG)
    assert [x[1:] for x in a.trace] == [x[1:] for x in b.trace]
    assert a.best_mapping == b.best_mapping


def test_greedy_picks_minimum_bound(Q3, T4):
    seen = []

    def observer(state, actions, bounds):
        seen.append(np.asarray(bounds).copy())

    branch_and_bound(Q3, T4, GreedyLBPolicy(), BIG, observer=observer)
    assert seen and seen[0][0] == seen[0].min()


def test_result_record(Q3, T4):
    doc = branch_and_bound(Q3, T4, GreedyLBPolicy(), BIG).to_dict()
    assert doc["best_cost"]["total"] == 0
    assert doc["mapping"] == [[0, 0], [1, 1], [2, 2]]

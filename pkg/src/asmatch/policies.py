"""Heuristic node-pair selection policies.

A policy maps ``(state, actions)`` to one score per action; the search takes
the highest score, lowest target index first on ties.  Scores must not depend
on which other actions are present, only on the state and the action, so a
cached score vector stays valid after pruning.
"""
from __future__ import annotations

import numpy as np

from .bounds import DEFAULT_BOUND, lower_bounds


class Policy:
    #: scores form a probability distribution over the given actions
    probabilistic = False
    #: the policy reads the SearchState (not only the bounds)
    needs_state = True

    def scores(self, state, actions, bounds=None) -> np.ndarray:
        raise NotImplementedError


class GreedyLBPolicy(Policy):
    """Prefer the branch with the smallest lower bound."""

    needs_state = False

    def __init__(self, bound: str = DEFAULT_BOUND):
        self.bound = bound

    def scores(self, state, actions, bounds=None) -> np.ndarray:
        if bounds is None:
            bounds = lower_bounds(state, actions, self.bound)
        return -np.asarray(bounds, dtype=np.float64)


class RandomPolicy(Policy):
    """I.i.d. uniform scores, reproducible per (seed, state).

    The score vector of a state is drawn from a generator seeded by the run
    seed and the state's image sequence, so revisiting a state reproduces it.
    """

    def __init__(self, seed: int = 0):
        self.seed = int(seed)

    def scores(self, state, actions, bounds=None) -> np.ndarray:
        key = state.key()
        rng = np.random.default_rng([self.seed, len(key), *key])
        per_target = rng.random(state.gt.node_count)
        return per_target[[a.target_node for a in actions]]


class UniformPolicy(Policy):
    probabilistic = True
    needs_state = False

    def scores(self, state, actions, bounds=None) -> np.ndarray:
        n = len(actions) if actions is not None else len(bounds)
        return np.full(n, 1.0 / n)

"""Central finite-difference check of tape gradients."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from ..errors import ConfigError
from . import core
from .core import Tape, Tensor


def relative_error(a: float, n: float) -> float:
    return abs(a - n) / max(1e-8, abs(a) + abs(n))


def grad_check(f: Callable[[], Tensor], params: Sequence[Tensor], eps: float = 1e-5,
               samples: int = 50, rng: np.random.Generator | None = None,
               store=None) -> float:
    """Largest relative error between analytic and numeric derivatives.

    ``f`` builds a scalar from ``params`` and must be deterministic.  At
    least ``samples`` coordinates (all of them when fewer exist) are drawn
    uniformly over the concatenated parameters.  Passing the owning ``store``
    rejects training mode, where dropout would make ``f`` random.

    A coordinate whose two probes land on different sides of a kink (some
    relu, clip or minimum switches branch) has no meaningful finite
    difference; it is replaced by another random coordinate.
    """
    if store is not None and store.training:
        raise ConfigError("grad_check needs eval mode: dropout makes the function nondeterministic")
    rng = rng if rng is not None else np.random.default_rng(0)
    params = list(params)
    for p in params:
        p.grad = None
    with Tape() as tape:
        loss = f()
    tape.backward(loss, params)
    analytic = [p.grad.copy() for p in params]

    sizes = np.array([p.data.size for p in params])
    total = int(sizes.sum())
    pool = rng.permutation(total)
    bounds = np.cumsum(sizes)
    worst = 0.0
    base = _branches(f)
    checked = 0
    for flat in pool:
        if checked >= samples:
            break
        which = int(np.searchsorted(bounds, flat, side="right"))
        local = int(flat - (bounds[which - 1] if which else 0))
        view = params[which].data.reshape(-1)
        orig = view[local]
        view[local] = orig + eps
        up, up_branches = _probe(f)
        view[local] = orig - eps
        down, down_branches = _probe(f)
        view[local] = orig
        if up_branches != base or down_branches != base:
            continue
        checked += 1
        numeric = (up - down) / (2.0 * eps)
        worst = max(worst, relative_error(float(analytic[which].reshape(-1)[local]), numeric))
    return worst


def _probe(f):
    core._BRANCHES = []
    try:
        value = f().item()
        return value, core._BRANCHES
    finally:
        core._BRANCHES = None


def _branches(f) -> list:
    return _probe(f)[1]

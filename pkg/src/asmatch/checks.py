"""Shipped fixtures and the gradient-check suite used by ``grad-check``."""
from __future__ import annotations

from importlib import resources

import numpy as np

from .env import initial_state
from .graph import Graph, load_graph
from .tensor import Tensor, grad_check
from .tensor import ops


def fixture(name: str) -> Graph:
    """Load a packaged graph: ``"q3"`` (A-B-A triangle) or ``"t4"`` (triangle plus a C pendant)."""
    return load_graph(resources.files("asmatch") / "data" / f"{name}.json")


def fixture_path(name: str):
    return resources.files("asmatch") / "data" / f"{name}.json"


def primitive_checks(seed: int = 0) -> dict[str, float]:
    """Max relative gradient error for every primitive, keyed by op name."""
    rng = np.random.default_rng(seed)

    def p(*shape):
        return Tensor(rng.normal(size=shape), requires_grad=True)

    x, y, w, b, v = p(3, 4, 5), p(3, 4, 5), p(5, 6), p(6), p(5)
    g, be = p(5), p(5)
    xs, w3, ys = p(3, 5), p(5, 5, 2), p(3, 4, 5)
    q, k, val = p(3, 4, 8), p(3, 6, 8), p(3, 6, 8)
    mask = rng.random((3, 4, 4)) > 0.3
    mask[..., 0] = True
    amask = rng.random((3, 4, 6)) > 0.4
    amask[..., 0] = True
    fill = rng.random((3, 4, 5)) > 0.5
    idx = np.array([0, 2, 2, 3, 1])
    rm, rv = rng.normal(size=5), rng.random(5) + 0.5
    target = np.array([1, 0, 3])

    def s(t):
        return ops.sum(ops.sigmoid(t))

    cases = {
        "matmul": (lambda: s(ops.matmul(x, w)), [x, w]),
        "add": (lambda: s(ops.add(ops.matmul(x, w), b)), [x, w, b]),
        "multiply": (lambda: s(ops.mul(x, y)), [x, y]),
        "layer_scale": (lambda: s(ops.layer_scale(x, v)), [x, v]),
        "concat": (lambda: s(ops.mul(ops.concat([x, y], axis=1), ops.concat([y, x], axis=1))), [x, y]),
        "relu": (lambda: s(ops.mul(ops.relu(x), y)), [x, y]),
        "sigmoid": (lambda: s(ops.sigmoid(x)), [x]),
        "softmax": (lambda: s(ops.softmax(ops.matmul(x, ops.swapaxes(y, 1, 2)), mask)), [x, y]),
        "log_softmax": (lambda: ops.cross_entropy(ops.mean(x, axis=2), target), [x]),
        "mean_pool": (lambda: s(ops.mean_pool(x, axis=1)), [x]),
        "masked_fill": (lambda: s(ops.mul(ops.masked_fill(x, fill, 0.5), y)), [x, y]),
        "batch_norm": (lambda: s(ops.mul(ops.batch_norm(x, g, be, rm.copy(), rv.copy(), True), y)), [x, g, be]),
        "batch_norm_eval": (lambda: s(ops.mul(ops.batch_norm(x, g, be, rm, rv, False), y)), [x, g, be]),
        "layer_norm": (lambda: s(ops.mul(ops.layer_norm(x, g, be), y)), [x, g, be]),
        "bilinear": (lambda: s(ops.bilinear(xs, w3, ys)), [xs, w3, ys]),
        "attention": (lambda: s(ops.attention(q, k, val, amask)), [q, k, val]),
        "take": (lambda: s(ops.take(x, idx, axis=2)), [x]),
        "segment_sum": (lambda: s(ops.segment_sum(x, idx, 7, axis=2)), [x]),
        "pick": (lambda: s(ops.pick(x, np.array([0, 3, 1]))), [x]),
        "expand": (lambda: s(ops.mul(ops.expand(xs, 4, axis=1), ys)), [xs, ys]),
        "minimum_clip": (lambda: s(ops.minimum(x, ops.clip(ops.mul_scalar(y, 2.0), -0.5, 0.7))), [x, y]),
        "exp_log": (lambda: ops.sum(ops.log(ops.add_scalar(ops.exp(x), 1.0))), [x]),
        "reshape": (lambda: s(ops.matmul(ops.reshape(x, (12, 5)), w)), [x, w]),
    }
    return {name: grad_check(f, params, samples=60, rng=np.random.default_rng(seed))
            for name, (f, params) in cases.items()}


def policy_check(net=None, seed: int = 0, samples: int = 60) -> float:
    """Max relative gradient error of the policy forward pass on (Q3, T4).

    The checked scalar is a fixed random projection of both the logits and
    the log-probabilities.  Log-probabilities alone are invariant to a shift
    shared by all logits, which leaves some weights with a true derivative of
    order 1e-18 that finite differences cannot resolve.
    """
    from .env import Action, apply_action
    from .policy_net import EncoderConfig, PolicyNet, StateBatch

    if net is None:
        net = PolicyNet(EncoderConfig(num_labels=3, encoding=_lappe_rwse()), seed)
    net.store.eval()
    gq, gt = fixture("q3"), fixture("t4")
    s0 = initial_state(gq, gt)
    s1 = apply_action(s0, Action(s0.next_query, 0))
    batch = StateBatch.from_states([s0, s1], net.cfg)
    # move the running statistics off their initial values
    net.store.buffers["embed.bn.mean"][...] = np.random.default_rng(seed).normal(0, 0.1, net.cfg.hidden_dim)

    proj = np.random.default_rng([seed, 1]).normal(size=(2, 2, gt.node_count))

    def f():
        logits = net.logits(batch)
        logp = ops.log_softmax(logits, batch.free_targets)
        return ops.add(ops.sum(ops.mul(logits, Tensor(proj[0]))), ops.sum(ops.mul(logp, Tensor(proj[1]))))

    return grad_check(f, list(net.store.params.values()), samples=samples,
                      rng=np.random.default_rng(seed), store=net.store)


def _lappe_rwse():
    from .encodings import EncodingConfig
    return EncodingConfig(lap_k=3, rwse_m=4, mode="both")

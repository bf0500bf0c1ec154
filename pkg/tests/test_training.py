import json
import math

import numpy as np
import pytest

from asmatch.datagen import DatasetConfig, generate_dataset
from asmatch.env import Action, apply_action, initial_state, reward
from asmatch.errors import ConfigError
from asmatch.graph import ged
from asmatch.policy_net import EncoderConfig, PolicyNet
from asmatch.tensor import AdamW, ParamStore, Tape, Tensor, ops
from asmatch.training import (LR_GRID, PPOBatch, TrainConfig, clipped_surrogate, cross_entropy_value,
                              entropy, expert_accuracy, expert_episode, gen_expert_trajectories,
                              imitation_loss, imitation_step, normalize_returns, ppo_collect, ppo_loss,
                              ppo_update, train)

TINY = EncoderConfig(hidden_dim=16, layers=2, interaction_dim=8, heads=4, num_labels=3)
DATA = dict(target_nodes=12, target_edges=20, num_labels=3, n_targets=5, query_size=(3, 5))


@pytest.fixture(scope="module")
def pairs():
    return generate_dataset(DatasetConfig(n_pairs=30, seed=3, **DATA)).pairs


def _ln(x):
    return math.log(x)


def test_cross_entropy_closed_forms():
    assert cross_entropy_value(np.array([1.0, 0.0]), 0) == 0.0
    assert cross_entropy_value(np.array([0.5, 0.5]), 1) == pytest.approx(0.6931, abs=1e-4)
    assert cross_entropy_value(np.full(4, 0.25), 2) == pytest.approx(1.3863, abs=1e-4)


def test_expert_examples(pairs):
    ex = gen_expert_trajectories(pairs)
    assert len(ex) == sum(p.query.node_count for p in pairs)
    for p in pairs:
        s = initial_state(p.query, p.target)
        while not s.is_terminal:
            s = apply_action(s, Action(s.next_query, p.seed_correspondence.target_of(s.next_query)))
        cost = ged(s.mapping, p.query, p.target).total
        assert cost == p.noise.actual
        if p.noise.level == 0:
            assert cost == 0
    for e in ex:
        assert e.actions[e.expert_index].query_node == e.state.next_query


def test_uniform_scores_give_log_action_count(pairs):
    net = PolicyNet(TINY, 0)
    net.store.params["score.mlp2.w"].data[...] = 0.0
    net.store.eval()
    g = expert_episode(pairs[0])
    nt, k = pairs[0].target.node_count, len(g)
    expected = np.mean([_ln(nt - i) for i in range(k)])
    assert imitation_loss(net, [g]) == pytest.approx(expected, abs=1e-12)


def test_ppo_clip_examples():
    adv = np.array([0.7, 1.0, -1.0])
    logp_old = np.log(np.array([0.2, 0.2, 0.2]))
    logp_new = np.log(np.array([0.2, 0.3, 0.3]))
    out = clipped_surrogate(Tensor(logp_new), logp_old, adv, 0.2).data
    assert abs(out[0] - 0.7) <= 1e-12
    assert abs(out[1] - 1.2) <= 1e-12
    assert abs(out[2] + 1.5) <= 1e-12


def test_clipped_branch_has_zero_gradient():
    logp_old = np.log(np.array([0.2, 0.2]))
    new = Tensor(np.log(np.array([0.3, 0.3])), requires_grad=True)
    adv = np.array([1.0, -1.0])
    with Tape() as tape:
        loss = ops.sum(clipped_surrogate(new, logp_old, adv, 0.2))
    tape.backward(loss, [new])
    assert new.grad[0] == 0.0
    assert new.grad[1] == pytest.approx(-1.5, abs=1e-12)
    # finite differences agree
    h = 1e-6
    for i, want in enumerate(new.grad):
        up, down = new.data.copy(), new.data.copy()
        up[i] += h
        down[i] -= h
        fd = (clipped_surrogate(Tensor(up), logp_old, adv, 0.2).data.sum()
              - clipped_surrogate(Tensor(down), logp_old, adv, 0.2).data.sum()) / (2 * h)
        assert fd == pytest.approx(want, abs=1e-6)


def test_entropy_step_moves_toward_uniform():
    store = ParamStore()
    z = store.add("z", np.array([[2.0, -1.0, 0.3, 0.0]]))
    mask = np.ones((1, 4), dtype=bool)

    def kl():
        p = np.exp(z.data - z.data.max())
        p /= p.sum()
        return float(np.sum(p * np.log(p * 4)))

    before = kl()
    with Tape() as tape:
        loss = ops.mul_scalar(ops.sum(entropy(ops.log_softmax(z, mask))), -1.0)
    tape.backward(loss, [z])
    z.data = z.data - 1e-2 * z.grad
    assert kl() < before


def test_entropy_matches_direct_formula():
    p = np.array([[0.5, 0.25, 0.25, 0.0]])
    mask = p > 0
    logits = np.where(mask, np.log(np.where(mask, p, 1.0)), 0.0)
    h = entropy(ops.log_softmax(Tensor(logits), mask)).data
    assert h[0] == pytest.approx(-(0.5 * np.log(0.5) + 0.5 * np.log(0.25)), abs=1e-12)


def test_collect_normalizes_and_is_deterministic(pairs):
    net = PolicyNet(TINY, 1)
    a = ppo_collect(pairs[:6], net, np.random.default_rng(4))
    b = ppo_collect(pairs[:6], net, np.random.default_rng(4))
    adv = a.all_advantages()
    assert abs(adv.mean()) < 1e-10 and abs(adv.var() - 1.0) < 1e-6
    assert all(np.array_equal(x.actions, y.actions) for x, y in zip(a.groups, b.groups))
    assert a.clip == 0.2 and a.entropy_coef == 0.01 and a.gamma == 0.99


def test_zero_discount_returns_are_rewards(pairs):
    net = PolicyNet(TINY, 2)
    batch = ppo_collect(pairs[:4], net, np.random.default_rng(0), gamma=0.0)
    for g in batch.groups:
        s = initial_state(g.pair.query, g.pair.target)
        rewards = []
        for u, v in zip(g.query_nodes, g.actions):
            a = Action(int(u), int(v))
            rewards.append(reward(s, a).total)
            s = apply_action(s, a)
        assert g.returns.tolist() == rewards


def test_loss_at_old_policy_is_minus_mean_advantage(pairs):
    net = PolicyNet(TINY, 3)
    batch = ppo_collect(pairs[:5], net, np.random.default_rng(1), entropy_coef=0.0)
    assert ppo_loss(net, batch) == pytest.approx(-batch.all_advantages().mean(), abs=1e-9)


def test_identical_returns_update_only_through_entropy(pairs):
    net = PolicyNet(TINY, 4)
    batch = ppo_collect(pairs[:3], net, np.random.default_rng(2))
    for g in batch.groups:
        g.returns = np.ones_like(g.returns)
    normalize_returns(batch.groups)
    assert np.all(batch.all_advantages() == 0.0)
    before = net.store.values()
    batch.entropy_coef = 0.0
    ppo_update(net, AdamW(net.store, lr=1e-3, weight_decay=0.0), batch, 1, 1000, np.random.default_rng(0))
    assert all(np.array_equal(before[k], v) for k, v in net.store.values().items())
    batch.entropy_coef = 0.01
    ppo_update(net, AdamW(net.store, lr=1e-3, weight_decay=0.0), batch, 1, 1000, np.random.default_rng(0))
    assert any(not np.array_equal(before[k], v) for k, v in net.store.values().items())


def test_imitation_reaches_full_training_accuracy():
    ds = generate_dataset(DatasetConfig(n_pairs=20, noise_levels=(0.0,), seed=5, **DATA))
    groups = [expert_episode(p) for p in ds.pairs]
    net = PolicyNet(TINY, 0)
    opt = AdamW(net.store, lr=3e-3)
    for step in range(300):
        imitation_step(net, opt, groups, seed=0)
        if step % 25 == 24 and expert_accuracy(net, groups) >= 0.99:
            break
    assert expert_accuracy(net, groups) >= 0.99


def test_training_run_and_resume(tmp_path, pairs):
    train_pairs, val_pairs = pairs[:8], pairs[8:11]
    base = dict(encoder=TINY, il_epochs=2, il_batch_size=16, ppo_epochs=1, ppo_pairs_per_epoch=3,
                ppo_minibatch=16, ppo_passes=1, seed=7)
    full = train(TrainConfig(**base), train_pairs, val_pairs, out_dir=tmp_path / "full")
    assert [r["phase"] for r in full.log] == ["il", "il", "ppo"]
    assert all("val_mean_ged" in r for r in full.log)
    assert (tmp_path / "full" / "best.ckpt").exists()
    lines = (tmp_path / "full" / "train_log.jsonl").read_text().splitlines()
    assert [json.loads(x)["epoch"] for x in lines] == [0, 1, 2]

    first = train(TrainConfig(**{**base, "il_epochs": 1, "ppo_epochs": 0}), train_pairs, val_pairs,
                  out_dir=tmp_path / "first")
    assert first.log[0]["loss"] == full.log[0]["loss"]
    resumed = train(TrainConfig(**base), train_pairs, val_pairs, out_dir=tmp_path / "resumed",
                    resume=tmp_path / "first" / "last.ckpt")
    assert resumed.log[0]["epoch"] == 1
    assert resumed.log[0]["loss"] == full.log[1]["loss"]


def test_imitation_only_run(pairs):
    res = train(TrainConfig(encoder=TINY, il_epochs=1, il_batch_size=32, ppo_epochs=0), pairs[:5], pairs[5:7])
    assert [r["phase"] for r in res.log] == ["il"]
    assert math.isfinite(res.best_val)


def test_config_validation_and_grid():
    with pytest.raises(ConfigError):
        TrainConfig(clip=1.5).validate()
    with pytest.raises(ConfigError):
        train(TrainConfig(), [], [])
    assert LR_GRID == (5e-5, 1e-4, 5e-4, 1e-3, 5e-3, 1e-2)
    d = TrainConfig(encoder=TINY).to_dict()
    assert TrainConfig.from_dict(d) == TrainConfig(encoder=TINY)
    assert PPOBatch([]).clip == 0.2


def test_imitation_loss_is_chunk_invariant_in_eval(pairs):
    net = PolicyNet(TINY, 0)
    net.store.eval()
    groups = [expert_episode(p) for p in pairs[:6]]
    whole = imitation_loss(net, groups)
    grads = {k: p.grad.copy() for k, p in net.store.params.items()}
    net.store.zero_grad()
    pieces = imitation_loss(net, groups, chunk=1)
    assert pieces == pytest.approx(whole, abs=1e-12)
    for k, p in net.store.params.items():
        assert np.allclose(p.grad, grads[k], atol=1e-12)


def test_training_time_limit_stops_inside_epoch(pairs):
    cfg = TrainConfig(encoder=TINY, il_epochs=50, il_batch_size=4, ppo_epochs=3, time_limit=1e-9)
    res = train(cfg, pairs[:10], [])
    assert [r["phase"] for r in res.log] == ["il"]

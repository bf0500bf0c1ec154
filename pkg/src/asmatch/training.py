"""Imitation pre-training and clipped policy-gradient fine-tuning.

Imitation examples come from replaying each pair's known sampling
correspondence along the mapping order.  Fine-tuning rolls out the policy
without backtracking, normalizes discounted returns across the collected
batch and minimizes the clipped surrogate minus an entropy bonus.  There is
no learned critic.

Examples of one pair are always processed together so that a single batched
forward pass covers all of them.
"""
from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .datagen import InstancePair
from .env import Action, action_space, apply_action, discounted_returns, initial_state, reward
from .errors import ConfigError, NonFinite
from .graph import ged
from .policy_net import EncoderConfig, NeuralPolicy, PolicyNet, StateBatch
from .tensor import AdamW, Tape, Tensor
from .tensor import ops

LR_GRID = (5e-5, 1e-4, 5e-4, 1e-3, 5e-3, 1e-2)


@dataclass
class ImitationExample:
    state: object
    actions: list
    expert_index: int


@dataclass
class PairExamples:
    """All imitation examples of one pair, stacked for a batched forward."""

    pair: InstancePair
    images: np.ndarray        # (k, |V^q|)
    query_nodes: np.ndarray   # (k,)
    experts: np.ndarray       # (k,) expert target per step

    def __len__(self) -> int:
        return len(self.experts)

    def batch(self, cfg: EncoderConfig, rows=None) -> StateBatch:
        rows = slice(None) if rows is None else rows
        return StateBatch(self.pair.query, self.pair.target, self.images[rows], self.query_nodes[rows], cfg)


def expert_episode(pair: InstancePair) -> PairExamples:
    """Replay the seed correspondence along the mapping order."""
    state = initial_state(pair.query, pair.target)
    images, nodes, experts = [], [], []
    corr = pair.seed_correspondence
    while not state.is_terminal:
        u = state.next_query
        v = corr.target_of(u)
        images.append(state.mapping.as_array(pair.query.node_count))
        nodes.append(u)
        experts.append(v)
        state = apply_action(state, Action(u, v))
    return PairExamples(pair, np.array(images), np.array(nodes), np.array(experts))


def gen_expert_trajectories(pairs: Sequence[InstancePair], rng: np.random.Generator | None = None) -> list:
    """Flat list of :class:`ImitationExample`, one per pair step.

    The action space is the full set of free targets; with an infinite
    incumbent no bound can prune an expert action away.  ``rng`` shuffles
    the example order when given.
    """
    out = []
    for pair in pairs:
        state = initial_state(pair.query, pair.target)
        while not state.is_terminal:
            acts = action_space(state)
            u = state.next_query
            v = pair.seed_correspondence.target_of(u)
            out.append(ImitationExample(state, acts, [a.target_node for a in acts].index(v)))
            state = apply_action(state, Action(u, v))
    if rng is not None:
        out = [out[i] for i in rng.permutation(len(out))]
    return out


def _check_finite(loss: Tensor) -> None:
    if not np.isfinite(loss.data).all():
        raise NonFinite("loss is not finite")


def imitation_loss(net: PolicyNet, groups: Sequence[PairExamples], total: int | None = None,
                   chunk: int = 64) -> float:
    """Mean cross-entropy against expert actions, accumulating gradients.

    ``total`` is the number of examples the mean runs over (defaults to the
    examples in ``groups``).  Pairs are forwarded together in chunks of about
    ``chunk`` examples that share batch-norm statistics; smaller chunks bound
    memory on large batches.
    """
    total = total or sum(len(g) for g in groups)
    value = 0.0
    params = list(net.store.params.values())
    for part in _chunks(groups, chunk):
        batches = [g.batch(net.cfg) for g in part]
        with Tape() as tape:
            terms = []
            for g, b, logits in zip(part, batches, net.logits_many(batches)):
                logp = ops.log_softmax(logits, b.free_targets)
                terms.append(ops.sum(ops.pick_last(logp, g.experts)))
            loss = terms[0]
            for t in terms[1:]:
                loss = ops.add(loss, t)
            loss = ops.mul_scalar(loss, -1.0 / total)
        _check_finite(loss)
        tape.backward(loss, params)
        value += loss.item()
    return value


def _chunks(groups: Sequence[PairExamples], size: int):
    cur, n = [], 0
    for g in groups:
        if cur and n + len(g) > size:
            yield cur
            cur, n = [], 0
        cur.append(g)
        n += len(g)
    if cur:
        yield cur


def imitation_step(net: PolicyNet, opt: AdamW, groups: Sequence[PairExamples], seed: int = 0) -> float:
    """One optimizer step on a batch; dropout and batch-norm in training mode."""
    net.store.train()
    net.store.rng = np.random.default_rng([seed, net.store.step_count])
    net.store.zero_grad()
    value = imitation_loss(net, groups)
    opt.step()
    return value


def cross_entropy_value(probs: np.ndarray, expert: int) -> float:
    """-log of the probability given to the expert action."""
    return float(-np.log(probs[expert]))


def expert_accuracy(net: PolicyNet, groups: Sequence[PairExamples]) -> float:
    """Fraction of steps whose highest-probability action is the expert's."""
    training = net.store.training
    net.store.eval()
    hits = count = 0
    for g in groups:
        batch = g.batch(net.cfg)
        logits = net.logits(batch).data
        logits = np.where(batch.free_targets, logits, -np.inf)
        hits += int((logits.argmax(axis=1) == g.experts).sum())
        count += len(g)
    net.store.training = training
    return hits / max(count, 1)


def _batches(groups: Sequence[PairExamples], batch_size: int, rng: np.random.Generator):
    """Shuffle pairs and cut them into batches of about ``batch_size`` examples."""
    order = rng.permutation(len(groups))
    cur, size = [], 0
    for i in order:
        cur.append(groups[i])
        size += len(groups[i])
        if size >= batch_size:
            yield cur
            cur, size = [], 0
    if cur:
        yield cur


# -- clipped policy gradient ---------------------------------------------------

@dataclass
class PPOGroup:
    pair: InstancePair
    images: np.ndarray
    query_nodes: np.ndarray
    actions: np.ndarray       # chosen target per step
    masks: np.ndarray         # (k, |V^t|) action space each step saw
    old_logp: np.ndarray      # log P_old(a|s), floored at log(1e-12)
    returns: np.ndarray       # raw discounted returns
    adv: np.ndarray | None = None  # batch-normalized returns

    def __len__(self) -> int:
        return len(self.actions)


@dataclass
class PPOBatch:
    groups: list
    clip: float = 0.2
    entropy_coef: float = 0.01
    gamma: float = 0.99

    @property
    def size(self) -> int:
        return sum(len(g) for g in self.groups)

    def all_returns(self) -> np.ndarray:
        return np.concatenate([g.returns for g in self.groups])

    def all_advantages(self) -> np.ndarray:
        return np.concatenate([g.adv for g in self.groups])


def normalize_returns(groups: Sequence[PPOGroup]) -> None:
    r = np.concatenate([g.returns for g in groups])
    mu, sd = r.mean(), r.std()
    scale = 1.0 / sd if sd > 0 else 0.0
    for g in groups:
        g.adv = (g.returns - mu) * scale


def ppo_collect(pairs: Sequence[InstancePair], net: PolicyNet, rng: np.random.Generator,
                gamma: float = 0.99, clip: float = 0.2, entropy_coef: float = 0.01) -> PPOBatch:
    """Sample one backtrack-free episode per pair from the current (old) policy."""
    training = net.store.training
    net.store.eval()
    groups = []
    for pair in pairs:
        state = initial_state(pair.query, pair.target)
        images, nodes, acts, masks, old, rewards = [], [], [], [], [], []
        while not state.is_terminal:
            batch = StateBatch.from_states([state], net.cfg)
            mask = batch.free_targets[0]
            probs = ops.softmax(net.logits(batch), mask[None]).data[0]
            v = int(rng.choice(len(probs), p=probs / probs.sum()))
            u = state.next_query
            images.append(batch.images[0])
            nodes.append(u)
            acts.append(v)
            masks.append(mask)
            old.append(math.log(max(probs[v], 1e-12)))
            a = Action(u, v)
            rewards.append(reward(state, a).total)
            state = apply_action(state, a)
        groups.append(PPOGroup(pair, np.array(images), np.array(nodes), np.array(acts),
                               np.array(masks), np.array(old), discounted_returns(rewards, gamma)))
    normalize_returns(groups)
    net.store.training = training
    return PPOBatch(groups, clip, entropy_coef, gamma)


def clipped_surrogate(logp_new: Tensor, logp_old: np.ndarray, adv: np.ndarray, clip: float) -> Tensor:
    """Per-transition ``min(rho * A, clip(rho, 1 - eps, 1 + eps) * A)``."""
    rho = ops.exp(ops.sub(logp_new, Tensor(logp_old)))
    a = Tensor(adv)
    return ops.minimum(ops.mul(rho, a), ops.mul(ops.clip(rho, 1.0 - clip, 1.0 + clip), a))


def entropy(logp: Tensor) -> Tensor:
    """Row entropies; masked entries carry log-probability 0 and contribute nothing."""
    return ops.mul_scalar(ops.sum(ops.mul(ops.exp(logp), logp), axis=1), -1.0)


def ppo_loss(net: PolicyNet, batch: PPOBatch, groups: Sequence[PPOGroup] | None = None,
             backward: bool = False) -> float:
    """``-mean(clipped surrogate) - c * mean(entropy)`` over ``groups``.

    With ``backward`` the gradients are accumulated into the parameters.
    """
    groups = batch.groups if groups is None else groups
    total = sum(len(g) for g in groups)
    params = list(net.store.params.values())
    value = 0.0
    for g in groups:
        with Tape() as tape:
            b = StateBatch(g.pair.query, g.pair.target, g.images, g.query_nodes, net.cfg)
            logp = net.log_probs(b, g.masks)
            chosen = ops.pick_last(logp, g.actions)
            surr = ops.sum(clipped_surrogate(chosen, g.old_logp, g.adv, batch.clip))
            ent = ops.sum(entropy(logp))
            loss = ops.mul_scalar(ops.add(surr, ops.mul_scalar(ent, batch.entropy_coef)), -1.0 / total)
        _check_finite(loss)
        if backward:
            tape.backward(loss, params)
        value += loss.item()
    return value


def ppo_update(net: PolicyNet, opt: AdamW, batch: PPOBatch, passes: int, minibatch: int,
               rng: np.random.Generator) -> float:
    """Several shuffled minibatch passes over one collected batch (eval mode)."""
    net.store.eval()
    last = 0.0
    for _ in range(passes):
        for part in _batches(batch.groups, minibatch, rng):
            net.store.zero_grad()
            last = ppo_loss(net, batch, part, backward=True)
            opt.step()
    return last


# -- driver --------------------------------------------------------------------

@dataclass
class TrainConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    seed: int = 0
    il_epochs: int = 1000
    il_batch_size: int = 1024
    il_lr: float = 1e-3
    weight_decay: float = 0.01
    ppo_epochs: int = 10
    ppo_lr: float = 1e-4
    ppo_pairs_per_epoch: int = 64
    ppo_minibatch: int = 256
    ppo_passes: int = 4
    clip: float = 0.2
    entropy_coef: float = 0.01
    gamma: float = 0.99
    val_pairs: int | None = None
    # training pairs scored for expert accuracy after each imitation epoch
    accuracy_pairs: int = 64
    time_limit: float | None = None

    def validate(self) -> None:
        if self.il_epochs < 0 or self.ppo_epochs < 0:
            raise ConfigError("epoch counts must be >= 0")
        if self.accuracy_pairs < 0:
            raise ConfigError("accuracy_pairs must be >= 0")
        if self.il_batch_size < 1 or self.ppo_minibatch < 1 or self.ppo_passes < 1:
            raise ConfigError("batch sizes and passes must be >= 1")
        if self.il_lr <= 0 or self.ppo_lr <= 0:
            raise ConfigError("learning rates must be positive")
        if not 0 < self.clip < 1:
            raise ConfigError("clip must lie in (0, 1)")
        if not 0 <= self.gamma <= 1:
            raise ConfigError("gamma must lie in [0, 1]")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["encoder"] = self.encoder.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["encoder"] = EncoderConfig.from_dict(d.get("encoder", {}))
        return cls(**d)


def first_round_mean_ged(net: PolicyNet, pairs: Sequence[InstancePair]) -> float:
    """Mean edit distance of greedy backtrack-free descents."""
    from .env import rollout_episode
    if not pairs:
        return math.nan
    policy = NeuralPolicy(net)
    costs = []
    for p in pairs:
        traj = rollout_episode(p.query, p.target, policy, greedy=True)
        costs.append(ged(traj.mapping, p.query, p.target).total)
    return float(np.mean(costs))


@dataclass
class TrainResult:
    net: PolicyNet
    best_val: float
    log: list


def train(cfg: TrainConfig, train_pairs: Sequence[InstancePair], val_pairs: Sequence[InstancePair],
          out_dir=None, resume=None) -> TrainResult:
    """Imitation phase, then clipped policy-gradient phase.

    Validation (greedy first-round mean edit distance) runs after every
    epoch of either phase and the best parameters are kept.  With
    ``out_dir`` the log, manifest and checkpoints are written there.
    """
    cfg.validate()
    if not train_pairs:
        raise ConfigError("no training pairs")
    net = PolicyNet(cfg.encoder, cfg.seed)
    start_epoch = 0
    if resume is not None:
        meta = net.store.load(resume)
        start_epoch = int(meta.get("epoch", -1)) + 1
    val_pairs = list(val_pairs)[:cfg.val_pairs] if cfg.val_pairs else list(val_pairs)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        manifest = {"train": cfg.to_dict(), "train_pairs": [p.pair_id for p in train_pairs],
                    "val_pairs": [p.pair_id for p in val_pairs], "ppo_epochs_meaning": "outer iterations",
                    "resume": str(resume) if resume else None}
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
        logf = open(out / "train_log.jsonl", "a")
    log: list = []
    best_val, best_values = math.inf, net.store.values()
    t0 = time.monotonic()

    def record(rec: dict) -> None:
        nonlocal best_val, best_values
        rec["val_mean_ged"] = first_round_mean_ged(net, val_pairs) if val_pairs else math.nan
        rec["wall_time"] = round(time.monotonic() - t0, 3)
        log.append(rec)
        if out is not None:
            logf.write(json.dumps(rec, sort_keys=True) + "\n")
            logf.flush()
            net.save(out / "last.ckpt", {"epoch": rec["epoch"]})
        if rec["val_mean_ged"] < best_val or not math.isfinite(best_val):
            best_val = rec["val_mean_ged"]
            best_values = net.store.values()
            if out is not None:
                net.save(out / "best.ckpt", {"epoch": rec["epoch"], "val_mean_ged": best_val})

    def out_of_time() -> bool:
        return cfg.time_limit is not None and time.monotonic() - t0 > cfg.time_limit

    groups = [expert_episode(p) for p in train_pairs]
    opt = AdamW(net.store, lr=cfg.il_lr, weight_decay=cfg.weight_decay)
    epoch = start_epoch
    for epoch in range(start_epoch, cfg.il_epochs):
        rng = np.random.default_rng([cfg.seed, 10, epoch])
        losses = []
        for part in _batches(groups, cfg.il_batch_size, rng):
            if losses and out_of_time():
                break
            losses.append(imitation_step(net, opt, part, cfg.seed))
        net.store.eval()
        record({"phase": "il", "epoch": epoch, "loss": float(np.mean(losses)),
                "train_accuracy": expert_accuracy(net, groups[:cfg.accuracy_pairs])})
        if out_of_time():
            break

    opt = AdamW(net.store, lr=cfg.ppo_lr, weight_decay=cfg.weight_decay)
    first = cfg.il_epochs
    for k in range(max(start_epoch - first, 0), cfg.ppo_epochs):
        if out_of_time():
            break
        rng = np.random.default_rng([cfg.seed, 20, k])
        pick = rng.permutation(len(train_pairs))[:cfg.ppo_pairs_per_epoch]
        batch = ppo_collect([train_pairs[i] for i in pick], net, rng, cfg.gamma, cfg.clip, cfg.entropy_coef)
        loss = ppo_update(net, opt, batch, cfg.ppo_passes, cfg.ppo_minibatch, rng)
        record({"phase": "ppo", "epoch": first + k, "loss": loss,
                "mean_return": float(batch.all_returns().mean()),
                "entropy": _mean_entropy(net, batch)})

    if val_pairs:
        net.store.load_values(best_values)
    net.store.eval()
    if out is not None:
        logf.close()
    return TrainResult(net, best_val, log)


def _mean_entropy(net: PolicyNet, batch: PPOBatch) -> float:
    vals = []
    for g in batch.groups:
        b = StateBatch(g.pair.query, g.pair.target, g.images, g.query_nodes, net.cfg)
        vals.append(entropy(net.log_probs(b, g.masks)).data)
    return float(np.concatenate(vals).mean())


def lr_sweep(cfg: TrainConfig, train_pairs, val_pairs, grid: Sequence[float] = LR_GRID) -> dict:
    """Imitation-only runs over ``grid``; maps each learning rate to its best validation GED."""
    return {lr: train(replace(cfg, il_lr=lr, ppo_epochs=0), train_pairs, val_pairs).best_val for lr in grid}

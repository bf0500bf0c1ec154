"""Graph-transformer policy over node-pair actions.

Both graphs are embedded from three feature families (label one-hot,
mapped flag, positional/structural encoding), refined by ``layers`` rounds
of an intra-graph layer (edge-gated message passing plus global multi-head
self-attention) and an inter-graph cross-attention layer along the current
mapping and candidate links, and summarized per node by concatenating every
round's output.  An action ``u -> v`` is scored from a bilinear interaction
of the two node embeddings and a pooled state embedding.

Forward passes are batched over several states of the same graph pair:
node tensors are ``(B, n, d)``.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .encodings import EncodingConfig, label_onehot, pos_struct
from .env import SearchState
from .errors import ConfigError, EmptyActionSet, ShapeMismatch
from .graph import Graph
from .policies import Policy
from .tensor import ParamStore, Tensor
from .tensor import ops


@dataclass(frozen=True)
class EncoderConfig:
    hidden_dim: int = 32
    layers: int = 4
    interaction_dim: int = 32
    heads: int = 4
    num_labels: int = 13
    encoding: EncodingConfig = field(default_factory=EncodingConfig)
    dropout: float = 0.1
    global_attention: bool = True
    # restrict an unmapped query node's candidate links to same-label targets
    candidate_same_label: bool = False

    def __post_init__(self):
        if self.hidden_dim % self.heads:
            raise ConfigError(f"hidden_dim {self.hidden_dim} is not divisible by heads {self.heads}")
        if min(self.hidden_dim, self.layers, self.interaction_dim, self.heads, self.num_labels) < 1:
            raise ConfigError("encoder sizes must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        d = dict(d)
        d["encoding"] = EncodingConfig(**d.get("encoding", {}))
        return cls(**d)


def _directed_edges(g: Graph):
    e = g.edges
    return np.concatenate([e[:, 0], e[:, 1]]), np.concatenate([e[:, 1], e[:, 0]])


class StateBatch:
    """Input arrays for ``B`` states of one graph pair.

    ``images`` is ``(B, |V^q|)`` with ``-1`` for unmapped query nodes and
    ``query_nodes`` holds the node each state assigns next.
    """

    def __init__(self, gq: Graph, gt: Graph, images: np.ndarray, query_nodes: Sequence[int],
                 cfg: EncoderConfig):
        images = np.atleast_2d(np.asarray(images, dtype=np.int64))
        if images.shape[1] != gq.node_count:
            raise ShapeMismatch(f"images {images.shape} do not match {gq.node_count} query nodes")
        self.gq, self.gt = gq, gt
        self.images = images
        self.query_nodes = np.asarray(query_nodes, dtype=np.int64)
        b, nq, nt = images.shape[0], gq.node_count, gt.node_count
        self.size = b
        self.flags_q = (images >= 0).astype(np.float64)
        used = np.zeros((b, nt), dtype=bool)
        rows, cols = np.nonzero(images >= 0)
        used[rows, images[rows, cols]] = True
        self.flags_t = used.astype(np.float64)
        self.free_targets = ~used

        # mapped query node -> its image; unmapped -> every free target
        links = (images < 0)[:, :, None] & self.free_targets[:, None, :]
        if cfg.candidate_same_label:
            same = gq.labels[:, None] == gt.labels[None, :]
            narrowed = links & same[None]
            keep = narrowed.any(axis=2, keepdims=True)
            links = np.where(keep, narrowed, links)
        links[rows, cols, images[rows, cols]] = True
        self.links = links

        width = max(cfg.num_labels, gq.num_labels, gt.num_labels)
        if width != cfg.num_labels:
            raise ConfigError(f"graphs use {width} labels but the model was built for {cfg.num_labels}")
        self.labels_q = label_onehot(gq, width)
        self.labels_t = label_onehot(gt, width)
        self.pos_q = pos_struct(gq, cfg.encoding)
        self.pos_t = pos_struct(gt, cfg.encoding)
        self.edges_q = _directed_edges(gq)
        self.edges_t = _directed_edges(gt)

    @classmethod
    def from_states(cls, states: Sequence[SearchState], cfg: EncoderConfig) -> "StateBatch":
        gq, gt = states[0].gq, states[0].gt
        images = np.stack([s.mapping.as_array(gq.node_count) for s in states])
        return cls(gq, gt, images, [s.next_query for s in states], cfg)


class PolicyNet:
    def __init__(self, cfg: EncoderConfig | None = None, seed: int = 0):
        self.cfg = cfg = cfg or EncoderConfig()
        self.store = s = ParamStore(seed)
        d, f = cfg.hidden_dim, cfg.interaction_dim
        w = cfg.encoding.width
        s.linear("embed.label", cfg.num_labels, d)
        s.linear("embed.flag", 1, d)
        s.linear("embed.pos", w, d)
        s.linear("embed.mix", 3 * d, d)
        s.add("embed.bn.gamma", np.ones(d))
        s.add("embed.bn.beta", np.zeros(d))
        s.buffer("embed.bn.mean", np.zeros(d))
        s.buffer("embed.bn.var", np.ones(d))
        for i in range(cfg.layers):
            p = f"intra{i}"
            for name in ("U", "V", "A", "B"):
                s.linear(f"{p}.{name}", d, d)
            if cfg.global_attention:
                self._attention_params(f"{p}.attn")
            s.linear(f"{p}.mlp1", d, 2 * d)
            s.linear(f"{p}.mlp2", 2 * d, d)
            s.add(f"{p}.ln.gamma", np.ones(d))
            s.add(f"{p}.ln.beta", np.zeros(d))
            for side in ("q", "t"):
                p = f"inter{i}.{side}"
                s.linear(f"{p}.W1", d, d)
                s.linear(f"{p}.W2", d, d, bias=False)
                s.linear(f"{p}.Wq", d, d, bias=False)
                s.linear(f"{p}.Wk", d, d, bias=False)
        s.linear("jk.q", cfg.layers * d, d)
        s.linear("jk.t", cfg.layers * d, d)
        self._attention_params("pool.attn")
        s.add("score.W3", s.rng.normal(0.0, 1.0 / d, (d, d, f)))
        s.linear("score.mlp1", f + d, d)
        s.linear("score.mlp2", d, 1)

    def _attention_params(self, p: str) -> None:
        d = self.cfg.hidden_dim
        for name in ("q", "k", "v"):
            self.store.linear(f"{p}.{name}", d, d, bias=False)
        self.store.linear(f"{p}.o", d, d)

    def p(self, name: str) -> Tensor:
        return self.store.params[name]

    # -- building blocks ---------------------------------------------------

    def _linear(self, x: Tensor, name: str) -> Tensor:
        y = ops.matmul(x, self.p(f"{name}.w"))
        b = self.store.params.get(f"{name}.b")
        return ops.add(y, b) if b is not None else y

    def _dropout(self, x: Tensor) -> Tensor:
        return ops.dropout(x, self.cfg.dropout, self.store.rng, self.store.training)

    def _split_heads(self, x: Tensor) -> Tensor:
        b, n, d = x.shape
        h = self.cfg.heads
        return ops.swapaxes(ops.reshape(x, (b, n, h, d // h)), 1, 2)

    def _merge_heads(self, x: Tensor) -> Tensor:
        b, h, n, dh = x.shape
        return ops.reshape(ops.swapaxes(x, 1, 2), (b, n, h * dh))

    def _heads_attention(self, xq: Tensor, xk: Tensor, values: Tensor, wq: str, wk: str,
                         mask: np.ndarray | None, return_weights: bool = False):
        q = self._split_heads(ops.matmul(xq, self.p(wq)))
        k = self._split_heads(ops.matmul(xk, self.p(wk)))
        v = self._split_heads(values)
        m = None if mask is None else mask[:, None, :, :]
        out, w = ops.attention(q, k, v, m, return_weights=True)
        out = self._merge_heads(out)
        return (out, w) if return_weights else out

    def self_attention(self, x: Tensor, p: str) -> Tensor:
        v = ops.matmul(x, self.p(f"{p}.v.w"))
        out = self._heads_attention(x, x, v, f"{p}.q.w", f"{p}.k.w", None)
        return self._linear(out, f"{p}.o")

    # -- encoder -----------------------------------------------------------

    def embed(self, batch: StateBatch) -> tuple[Tensor, Tensor]:
        """Input embeddings ``(B, |V^q|, d)`` and ``(B, |V^t|, d)``."""
        return self.embed_many([batch])[0]

    def embed_many(self, batches: Sequence[StateBatch]) -> list:
        """Input embeddings of several batches sharing one set of batch-norm statistics.

        The statistics run over every query and target node of every state
        in ``batches``, so a minibatch spanning several graph pairs is
        normalized as one batch.
        """
        feats = [self._input_features(b) for b in batches]
        d = self.cfg.hidden_dim
        flats = [ops.reshape(f, (-1, d)) for f in feats]
        joint = flats[0] if len(flats) == 1 else ops.concat(flats, axis=0)
        joint = ops.batch_norm(joint, self.p("embed.bn.gamma"), self.p("embed.bn.beta"),
                               self.store.buffers["embed.bn.mean"], self.store.buffers["embed.bn.var"],
                               self.store.training)
        out, start = [], 0
        for f, b in zip(feats, batches):
            rows = f.shape[0] * f.shape[1]
            part = joint if len(feats) == 1 else ops.take(joint, np.arange(start, start + rows), axis=0)
            start += rows
            both = ops.reshape(part, f.shape)
            nq = b.labels_q.shape[0]
            out.append((ops.take(both, np.arange(nq), axis=1), ops.take(both, np.arange(nq, f.shape[1]), axis=1)))
        return out

    def _input_features(self, batch: StateBatch) -> Tensor:
        """Projected features of query then target nodes, before normalization."""
        out = []
        for labels, flags, pos in ((batch.labels_q, batch.flags_q, batch.pos_q),
                                   (batch.labels_t, batch.flags_t, batch.pos_t)):
            b = batch.size
            lab = ops.expand(self._linear(Tensor(labels), "embed.label"), b)
            pe = ops.expand(self._linear(Tensor(pos), "embed.pos"), b)
            fl = self._linear(Tensor(flags[:, :, None]), "embed.flag")
            out.append(self._linear(ops.concat([lab, fl, pe], axis=-1), "embed.mix"))
        return ops.concat(out, axis=1)

    def intra_layer(self, x: Tensor, edges, i: int) -> Tensor:
        p = f"intra{i}"
        src, dst = edges
        n = x.shape[1]
        xm = self._linear(x, f"{p}.U")
        if src.size:
            gate = ops.sigmoid(ops.add(ops.take(self._linear(x, f"{p}.A"), dst, axis=1),
                                       ops.take(self._linear(x, f"{p}.B"), src, axis=1)))
            msg = ops.mul(gate, ops.take(self._linear(x, f"{p}.V"), src, axis=1))
            xm = ops.add(xm, ops.segment_sum(msg, dst, n, axis=1))
        z = xm
        if self.cfg.global_attention:
            z = ops.add(z, self.self_attention(x, f"{p}.attn"))
        h = self._dropout(ops.relu(self._linear(z, f"{p}.mlp1")))
        h = self._linear(h, f"{p}.mlp2")
        return ops.layer_norm(ops.add(x, h), self.p(f"{p}.ln.gamma"), self.p(f"{p}.ln.beta"))

    def inter_side(self, x: Tensor, other: Tensor, mask: np.ndarray, p: str,
                   return_weights: bool = False):
        """``relu(W1 x_u + sum_v alpha_uv W2 x_v)`` over the linked nodes ``v``."""
        values = ops.matmul(other, self.p(f"{p}.W2.w"))
        msg, w = self._heads_attention(x, other, values, f"{p}.Wq.w", f"{p}.Wk.w", mask, True)
        out = ops.relu(ops.add(self._linear(x, f"{p}.W1"), msg))
        return (out, w) if return_weights else out

    def inter_layer(self, xq: Tensor, xt: Tensor, batch: StateBatch, i: int):
        mask_t = np.swapaxes(batch.links, 1, 2)
        return (self.inter_side(xq, xt, batch.links, f"inter{i}.q"),
                self.inter_side(xt, xq, mask_t, f"inter{i}.t"))

    def encode(self, batch: StateBatch, embedded=None) -> tuple[Tensor, Tensor]:
        xq, xt = self.embed(batch) if embedded is None else embedded
        outs_q, outs_t = [], []
        for i in range(self.cfg.layers):
            xq = self.intra_layer(xq, batch.edges_q, i)
            xt = self.intra_layer(xt, batch.edges_t, i)
            xq, xt = self.inter_layer(xq, xt, batch, i)
            outs_q.append(xq)
            outs_t.append(xt)
        xq = self._linear(ops.concat(outs_q, axis=-1), "jk.q")
        xt = self._linear(ops.concat(outs_t, axis=-1), "jk.t")
        return xq, xt

    # -- decoder -----------------------------------------------------------

    def logits(self, batch: StateBatch, embedded=None) -> Tensor:
        """Unnormalized scores ``(B, |V^t|)`` for mapping each state's next node to every target.

        ``embedded`` takes the output of :meth:`embed_many` for this batch.
        """
        xq, xt = self.encode(batch, embedded)
        state = ops.mean(self.self_attention(xq, "pool.attn"), axis=1)
        xu = ops.pick(xq, batch.query_nodes)
        inter = ops.bilinear(xu, self.p("score.W3"), xt)
        nt = xt.shape[1]
        h = ops.concat([inter, ops.expand(state, nt, axis=1)], axis=-1)
        h = self._dropout(ops.relu(self._linear(h, "score.mlp1")))
        out = self._linear(h, "score.mlp2")
        return ops.reshape(out, (batch.size, nt))

    def logits_many(self, batches: Sequence[StateBatch]) -> list:
        """Logits of several batches normalized together (see :meth:`embed_many`)."""
        return [self.logits(b, e) for b, e in zip(batches, self.embed_many(batches))]

    def log_probs(self, batch: StateBatch, action_mask: np.ndarray | None = None) -> Tensor:
        """Log-probabilities over targets; entries outside ``action_mask`` are 0."""
        mask = batch.free_targets if action_mask is None else action_mask
        if not mask.any(axis=1).all():
            raise EmptyActionSet("a state in the batch has no actions")
        return ops.log_softmax(self.logits(batch), mask)

    def distribution(self, state: SearchState, actions: Sequence) -> np.ndarray:
        """Probabilities over ``actions`` (in their order) for one state."""
        if not actions:
            raise EmptyActionSet("no actions to score")
        targets = np.array([a.target_node for a in actions], dtype=np.int64)
        batch = StateBatch.from_states([state], self.cfg)
        mask = np.zeros((1, state.gt.node_count), dtype=bool)
        mask[0, targets] = True
        logits = self.logits(batch)
        return ops.softmax(logits, mask).data[0, targets]

    # -- persistence -------------------------------------------------------

    def save(self, path, extra: dict | None = None):
        meta = {"encoder": self.cfg.to_dict()}
        meta.update(extra or {})
        return self.store.save(path, meta)

    @classmethod
    def load(cls, path) -> "PolicyNet":
        from .tensor import read_metadata
        meta = read_metadata(path)
        net = cls(EncoderConfig.from_dict(meta["encoder"]))
        net.store.load(path)
        return net


class NeuralPolicy(Policy):
    """Search/rollout policy backed by a :class:`PolicyNet` in eval mode."""

    probabilistic = True

    def __init__(self, net: PolicyNet):
        self.net = net

    def scores(self, state, actions, bounds=None) -> np.ndarray:
        training = self.net.store.training
        self.net.store.eval()
        try:
            return self.net.distribution(state, actions)
        finally:
            self.net.store.training = training

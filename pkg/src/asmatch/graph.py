"""Labeled undirected graphs, node mappings and the edit-distance objective.

A query node ``u`` mapped to target node ``M(u)`` costs 1 when their labels
differ; a query edge ``(u1, u2)`` costs 1 when ``(M(u1), M(u2))`` is not a
target edge.  Unmapped target structure is never charged.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    EmptySelection,
    IncompleteMapping,
    IndexOutOfRange,
    InvalidMapping,
    ParseError,
    SchemaViolation,
)


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


class Graph:
    """Immutable undirected simple graph with categorical node labels.

    ``labels[i]`` is the label id of node ``i``; ids live in
    ``range(num_labels)``.  ``edges`` is an ``(m, 2)`` array with ``u < v``
    per row, sorted lexicographically.
    """

    __slots__ = ("labels", "num_labels", "edges", "adj", "degrees", "_neighbors", "_key", "__weakref__")

    def __init__(self, labels: Sequence[int], edges: Iterable[Sequence[int]] = (), num_labels: int | None = None):
        labels = np.asarray(labels, dtype=np.int64).reshape(-1)
        n = labels.shape[0]
        if num_labels is None:
            num_labels = int(labels.max()) + 1 if n else 1
        if n and (labels.min() < 0 or labels.max() >= num_labels):
            raise SchemaViolation(f"label ids must lie in [0, {num_labels})")
        norm = set()
        for e in edges:
            u, v = int(e[0]), int(e[1])
            if u == v:
                raise SchemaViolation(f"self-loop on node {u}")
            if not (0 <= u < n and 0 <= v < n):
                raise IndexOutOfRange(f"edge ({u}, {v}) outside node range [0, {n})")
            key = (u, v) if u < v else (v, u)
            if key in norm:
                raise SchemaViolation(f"duplicate edge {key}")
            norm.add(key)
        edge_arr = np.array(sorted(norm), dtype=np.int64).reshape(-1, 2)
        adj = np.zeros((n, n), dtype=bool)
        if len(edge_arr):
            adj[edge_arr[:, 0], edge_arr[:, 1]] = True
            adj[edge_arr[:, 1], edge_arr[:, 0]] = True
        self.labels = _frozen(labels)
        self.num_labels = int(num_labels)
        self.edges = _frozen(edge_arr)
        self.adj = _frozen(adj)
        self.degrees = _frozen(adj.sum(axis=1).astype(np.int64))
        self._neighbors = None
        self._key = None

    @property
    def node_count(self) -> int:
        return int(self.labels.shape[0])

    @property
    def edge_count(self) -> int:
        return int(self.edges.shape[0])

    def __len__(self) -> int:
        return self.node_count

    def neighbors(self, u: int) -> np.ndarray:
        if self._neighbors is None:
            self._neighbors = tuple(_frozen(np.flatnonzero(row)) for row in self.adj)
        return self._neighbors[u]

    def has_edge(self, u: int, v: int) -> bool:
        return bool(self.adj[u, v])

    def key(self) -> str:
        """Canonical serialization; equal graphs have equal keys."""
        if self._key is None:
            self._key = json.dumps(to_dict(self), separators=(",", ":"), sort_keys=True)
        return self._key

    def __eq__(self, other) -> bool:
        if not isinstance(other, Graph):
            return NotImplemented
        return self.key() == other.key()

    def __hash__(self) -> int:
        return hash(self.key())

    def __repr__(self) -> str:
        return f"Graph(n={self.node_count}, m={self.edge_count}, L={self.num_labels})"


class NodeMapping:
    """Ordered injective partial map from query nodes to target nodes.

    Pairs keep insertion order, which in a search equals the mapping order.
    Instances are immutable; :meth:`extend` returns a new mapping.
    """

    __slots__ = ("pairs", "_q2t", "_t2q")

    def __init__(self, pairs: Iterable[Sequence[int]] = ()):
        pairs = tuple((int(u), int(v)) for u, v in pairs)
        q2t, t2q = {}, {}
        for u, v in pairs:
            if u in q2t:
                raise InvalidMapping(f"query node {u} mapped twice")
            if v in t2q:
                raise InvalidMapping(f"target node {v} used twice")
            q2t[u] = v
            t2q[v] = u
        self.pairs = pairs
        self._q2t = q2t
        self._t2q = t2q

    @classmethod
    def from_array(cls, targets: Sequence[int]) -> "NodeMapping":
        """Mapping ``i -> targets[i]``; negative entries are left unmapped."""
        return cls((i, int(t)) for i, t in enumerate(targets) if t >= 0)

    def extend(self, u: int, v: int) -> "NodeMapping":
        u, v = int(u), int(v)
        if u in self._q2t:
            raise InvalidMapping(f"query node {u} already mapped")
        if v in self._t2q:
            raise InvalidMapping(f"target node {v} already used")
        new = NodeMapping.__new__(NodeMapping)
        new.pairs = self.pairs + ((u, v),)
        new._q2t = {**self._q2t, u: v}
        new._t2q = {**self._t2q, v: u}
        return new

    def target_of(self, u: int) -> int | None:
        return self._q2t.get(u)

    def query_of(self, v: int) -> int | None:
        return self._t2q.get(v)

    def has_query(self, u: int) -> bool:
        return u in self._q2t

    def has_target(self, v: int) -> bool:
        return v in self._t2q

    def query_nodes(self) -> tuple[int, ...]:
        return tuple(u for u, _ in self.pairs)

    def target_nodes(self) -> tuple[int, ...]:
        return tuple(v for _, v in self.pairs)

    def as_array(self, n_query: int) -> np.ndarray:
        out = np.full(n_query, -1, dtype=np.int64)
        for u, v in self.pairs:
            out[u] = v
        return out

    def __len__(self) -> int:
        return len(self.pairs)

    def __iter__(self):
        return iter(self.pairs)

    def __eq__(self, other) -> bool:
        if not isinstance(other, NodeMapping):
            return NotImplemented
        return self.pairs == other.pairs

    def __hash__(self) -> int:
        return hash(self.pairs)

    def __repr__(self) -> str:
        body = ", ".join(f"{u}->{v}" for u, v in self.pairs)
        return f"NodeMapping({body})"


@dataclass(frozen=True)
class EditCost:
    node_cost: int
    edge_cost: int

    @property
    def total(self) -> int:
        return self.node_cost + self.edge_cost

    def as_dict(self) -> dict:
        return {"node_cost": self.node_cost, "edge_cost": self.edge_cost, "total": self.total}


def _check_mapping(mapping: NodeMapping, gq: Graph, gt: Graph) -> None:
    nq, nt = gq.node_count, gt.node_count
    for u, v in mapping.pairs:
        if not (0 <= u < nq):
            raise InvalidMapping(f"query node {u} out of range [0, {nq})")
        if not (0 <= v < nt):
            raise InvalidMapping(f"target node {v} out of range [0, {nt})")


def partial_cost(mapping: NodeMapping, gq: Graph, gt: Graph) -> EditCost:
    """Edit cost restricted to terms already fixed by ``mapping``.

    Counts label mismatches over mapped pairs and query edges whose two
    endpoints are both mapped onto a target non-edge.
    """
    _check_mapping(mapping, gq, gt)
    if not len(mapping):
        return EditCost(0, 0)
    arr = mapping.as_array(gq.node_count)
    qs = np.fromiter((u for u, _ in mapping.pairs), dtype=np.int64, count=len(mapping))
    node_cost = int(np.count_nonzero(gq.labels[qs] != gt.labels[arr[qs]]))
    edge_cost = 0
    if gq.edge_count:
        a, b = gq.edges[:, 0], gq.edges[:, 1]
        both = (arr[a] >= 0) & (arr[b] >= 0)
        if both.any():
            edge_cost = int(np.count_nonzero(~gt.adj[arr[a[both]], arr[b[both]]]))
    return EditCost(node_cost, edge_cost)


def ged(mapping: NodeMapping, gq: Graph, gt: Graph) -> EditCost:
    """Edit distance of a complete mapping of ``gq`` into ``gt``."""
    _check_mapping(mapping, gq, gt)
    if len(mapping) != gq.node_count:
        missing = sorted(set(range(gq.node_count)) - set(mapping.query_nodes()))
        raise IncompleteMapping(f"unmapped query nodes: {missing}")
    return partial_cost(mapping, gq, gt)


def induced_subgraph(g: Graph, nodes: Iterable[int]) -> tuple[Graph, np.ndarray]:
    """Subgraph induced by ``nodes``, re-indexed densely in ascending order.

    Returns the subgraph and ``corr`` with ``corr[i]`` the original index of
    new node ``i``.
    """
    sel = sorted({int(x) for x in nodes})
    if not sel:
        raise EmptySelection("node selection is empty")
    if sel[0] < 0 or sel[-1] >= g.node_count:
        raise IndexOutOfRange(f"selection outside [0, {g.node_count})")
    corr = np.array(sel, dtype=np.int64)
    sub_adj = g.adj[np.ix_(corr, corr)]
    us, vs = np.nonzero(np.triu(sub_adj, k=1))
    sub = Graph(g.labels[corr], zip(us.tolist(), vs.tolist()), num_labels=g.num_labels)
    return sub, _frozen(corr)


def relabel_nodes(g: Graph, perm: Sequence[int]) -> Graph:
    """Graph with node ``i`` renamed to ``perm[i]``."""
    perm = np.asarray(perm, dtype=np.int64)
    labels = np.empty_like(g.labels)
    labels[perm] = g.labels
    edges = [(int(perm[u]), int(perm[v])) for u, v in g.edges]
    return Graph(labels, edges, num_labels=g.num_labels)


# -- file format ------------------------------------------------------------

def to_dict(g: Graph) -> dict:
    return {
        "label_alphabet": g.num_labels,
        "nodes": g.labels.tolist(),
        "edges": g.edges.tolist(),
    }


def from_dict(doc, source: str = "<graph>") -> Graph:
    if not isinstance(doc, dict):
        raise ParseError(f"{source}: top-level value must be an object")
    if doc.get("directed"):
        raise SchemaViolation(f"{source}: directed graphs are not supported")
    for field in ("label_alphabet", "nodes", "edges"):
        if field not in doc:
            raise ParseError(f"{source}: missing field '{field}'")
    alphabet = doc["label_alphabet"]
    names = None
    if isinstance(alphabet, list):
        names = {str(name): i for i, name in enumerate(alphabet)}
        if len(names) != len(alphabet):
            raise SchemaViolation(f"{source}: repeated name in label_alphabet")
        num_labels = len(alphabet)
    elif isinstance(alphabet, int) and not isinstance(alphabet, bool) and alphabet >= 1:
        num_labels = alphabet
    else:
        raise ParseError(f"{source}: field 'label_alphabet' must be a positive int or a list of names")

    nodes = doc["nodes"]
    if not isinstance(nodes, list):
        raise ParseError(f"{source}: field 'nodes' must be a list")
    labels = []
    for i, lab in enumerate(nodes):
        if isinstance(lab, str):
            if names is None or lab not in names:
                raise SchemaViolation(f"{source}: nodes[{i}]: unknown label {lab!r}")
            labels.append(names[lab])
        elif isinstance(lab, int) and not isinstance(lab, bool):
            if not 0 <= lab < num_labels:
                raise SchemaViolation(f"{source}: nodes[{i}]: label id {lab} outside [0, {num_labels})")
            labels.append(lab)
        else:
            raise ParseError(f"{source}: nodes[{i}]: label must be an int id or a name")

    edges = doc["edges"]
    if not isinstance(edges, list):
        raise ParseError(f"{source}: field 'edges' must be a list")
    seen = set()
    pairs = []
    n = len(labels)
    for i, e in enumerate(edges):
        if (not isinstance(e, list) or len(e) != 2
                or not all(isinstance(x, int) and not isinstance(x, bool) for x in e)):
            raise ParseError(f"{source}: edges[{i}]: expected [u, v] with integer endpoints")
        u, v = e
        if u == v:
            raise SchemaViolation(f"{source}: edges[{i}]: self-loop on node {u}")
        if u > v:
            raise SchemaViolation(f"{source}: edges[{i}]: endpoints must satisfy u < v")
        if not (0 <= u and v < n):
            raise SchemaViolation(f"{source}: edges[{i}]: endpoint outside [0, {n})")
        if (u, v) in seen:
            raise SchemaViolation(f"{source}: edges[{i}]: duplicate edge ({u}, {v})")
        seen.add((u, v))
        pairs.append((u, v))
    return Graph(labels, pairs, num_labels=num_labels)


def load_graph(path) -> Graph:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    return from_dict(doc, source=str(path))


def save_graph(g: Graph, path) -> None:
    Path(path).write_text(json.dumps(to_dict(g), separators=(",", ":")) + "\n", encoding="utf-8")

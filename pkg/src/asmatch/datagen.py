"""Synthetic (query, target) pairs with known noisy correspondences.

Seed queries are BFS-induced subgraphs or random-walk subgraphs of a target.
Noise changes ``k`` node labels and adds ``n_noise - k`` edges, where
``n_noise = floor(level * (|V| + |E|))`` and ``k`` is uniform on
``[0, n_noise]``.  Every label change and every added BFS-mode edge costs
exactly 1 under the seed correspondence, so that correspondence certifies an
upper bound of ``n_noise`` on the optimal edit distance.
"""
from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, InfeasibleNoise, SizeTooLarge
from .graph import Graph, NodeMapping, induced_subgraph, load_graph, relabel_nodes, save_graph


@dataclass(frozen=True)
class NoiseSpec:
    level: float
    n_noise: int
    n_node_noise: int
    n_node_changed: int
    n_edges_added: int

    @property
    def actual(self) -> int:
        return self.n_node_changed + self.n_edges_added

    @property
    def capped(self) -> bool:
        return self.actual < self.n_noise


@dataclass
class InstancePair:
    pair_id: int
    query: Graph
    target: Graph
    seed_correspondence: NodeMapping
    noise: NoiseSpec
    sample_mode: str
    target_id: int = 0
    split: str = ""
    seed: int = 0

    def key(self) -> str:
        return self.target.key() + "|" + self.query.key()


def random_target(n: int, m: int, num_labels: int, rng: np.random.Generator) -> Graph:
    """G(n, m) graph with labels drawn uniformly from ``range(num_labels)``."""
    max_m = n * (n - 1) // 2
    if m > max_m:
        raise ConfigError(f"cannot place {m} edges on {n} nodes")
    iu, ju = np.triu_indices(n, k=1)
    pick = rng.choice(max_m, size=m, replace=False)
    labels = rng.integers(0, num_labels, size=n)
    return Graph(labels, zip(iu[pick].tolist(), ju[pick].tolist()), num_labels=num_labels)


def bfs_sample(gt: Graph, size: int, rng: np.random.Generator, max_roots: int = 100) -> list[int]:
    """First ``size`` nodes of a BFS from a random root, in visiting order."""
    n = gt.node_count
    if not 1 <= size <= n:
        raise SizeTooLarge(f"sample size {size} outside [1, {n}]")
    for _ in range(max_roots):
        root = int(rng.integers(n))
        seen = {root}
        out = [root]
        queue = deque([root])
        while queue and len(out) < size:
            u = queue.popleft()
            nbrs = gt.neighbors(u).copy()
            rng.shuffle(nbrs)
            for w in nbrs.tolist():
                if w not in seen:
                    seen.add(w)
                    out.append(w)
                    queue.append(w)
                    if len(out) == size:
                        break
        if len(out) == size:
            return out
    raise SizeTooLarge(f"no component with {size} nodes found after {max_roots} roots")


def rw_sample(gt: Graph, steps: int, rng: np.random.Generator, max_nodes: int | None = None,
              max_starts: int = 100) -> tuple[list[int], set]:
    """Visited nodes and traversed edges of a random walk.

    The walk starts at a random node with at least one neighbor and makes
    ``steps`` moves, stopping early once ``max_nodes`` distinct nodes have
    been visited.
    """
    n = gt.node_count
    if n == 0:
        raise SizeTooLarge("empty target")
    start = None
    for _ in range(max_starts):
        cand = int(rng.integers(n))
        if gt.degrees[cand] > 0:
            start = cand
            break
    if start is None:
        raise SizeTooLarge("no start node with a neighbor found")
    nodes = [start]
    seen = {start}
    edges = set()
    u = start
    for _ in range(steps):
        if max_nodes is not None and len(nodes) >= max_nodes:
            break
        nbrs = gt.neighbors(u)
        w = int(nbrs[rng.integers(len(nbrs))])
        edges.add((min(u, w), max(u, w)))
        if w not in seen:
            seen.add(w)
            nodes.append(w)
        u = w
    return nodes, edges


def inject_noise(seed_query: Graph, level: float, rng: np.random.Generator,
                 strict: bool = False, max_redraws: int = 100) -> tuple[Graph, NoiseSpec]:
    """Relabel some nodes and add edges to ``seed_query``.

    Relabelled nodes always get a label different from their current one.
    When the graph has too few non-edges the added-edge count is capped and
    the actual count recorded (``strict`` raises instead).
    """
    if level < 0:
        raise ConfigError("noise level must be >= 0")
    n = seed_query.node_count
    n_noise = math.floor(level * (n + seed_query.edge_count))
    if n_noise == 0:
        return seed_query, NoiseSpec(level, 0, 0, 0, 0)

    can_relabel = n if seed_query.num_labels > 1 else 0
    k = int(rng.integers(0, n_noise + 1))
    for _ in range(max_redraws):
        if k <= can_relabel:
            break
        k = int(rng.integers(0, n_noise + 1))
    k_changed = min(k, can_relabel)

    labels = seed_query.labels.copy()
    if k_changed:
        nodes = rng.choice(n, size=k_changed, replace=False)
        for u in nodes.tolist():
            new = int(rng.integers(0, seed_query.num_labels - 1))
            labels[u] = new + (new >= labels[u])

    iu, ju = np.triu_indices(n, k=1)
    free = np.flatnonzero(~seed_query.adj[iu, ju])
    want = n_noise - k
    if want > free.size and strict:
        raise InfeasibleNoise(f"need {want} new edges but only {free.size} non-edges exist")
    n_add = min(want, int(free.size))
    edges = [tuple(e) for e in seed_query.edges.tolist()]
    if n_add:
        pick = rng.choice(free, size=n_add, replace=False)
        edges += list(zip(iu[pick].tolist(), ju[pick].tolist()))
    if strict and k_changed < k:
        raise InfeasibleNoise(f"cannot relabel {k} nodes")
    noisy = Graph(labels, edges, num_labels=seed_query.num_labels)
    return noisy, NoiseSpec(level, n_noise, k, k_changed, n_add)


@dataclass
class DatasetConfig:
    n_pairs: int = 100
    noise_levels: tuple = (0.0, 0.05, 0.10)
    sample_mode: str = "bfs"
    query_size: tuple = (10, 20)
    target_nodes: int = 100
    target_edges: int = 196
    num_labels: int = 13
    n_targets: int = 300
    target_files: tuple = ()
    rw_steps_per_node: int = 8
    shuffle_query_nodes: bool = True
    split_ratio: tuple = (8, 1, 1)
    seed: int = 0
    max_attempts_factor: int = 20

    def validate(self) -> None:
        if self.n_pairs < 1:
            raise ConfigError("n_pairs must be >= 1")
        if self.sample_mode not in ("bfs", "rw"):
            raise ConfigError("sample_mode must be 'bfs' or 'rw'")
        lo, hi = self.query_size
        if not 1 <= lo <= hi:
            raise ConfigError("query_size must satisfy 1 <= lo <= hi")
        if not self.target_files and hi > self.target_nodes:
            raise ConfigError("query_size exceeds target size")
        if not self.noise_levels or any(x < 0 for x in self.noise_levels):
            raise ConfigError("noise_levels must be non-empty and >= 0")
        if len(self.split_ratio) != 3 or min(self.split_ratio) < 0 or sum(self.split_ratio) <= 0:
            raise ConfigError("split_ratio needs three non-negative parts")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["noise_levels"] = list(self.noise_levels)
        d["query_size"] = list(self.query_size)
        d["target_files"] = list(self.target_files)
        d["split_ratio"] = list(self.split_ratio)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetConfig":
        d = dict(d)
        for k in ("noise_levels", "query_size", "target_files", "split_ratio"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)


@dataclass
class Dataset:
    config: DatasetConfig
    targets: list
    pairs: list = field(default_factory=list)
    shortfall: int = 0

    def split(self, name: str) -> list:
        return [p for p in self.pairs if p.split == name]

    def by_level(self, name: str = "test") -> dict:
        out = {}
        for p in self.split(name):
            out.setdefault(p.noise.level, []).append(p)
        return dict(sorted(out.items()))


def _make_pair(cfg: DatasetConfig, targets: list, index: int, attempt: int) -> InstancePair:
    seed = [cfg.seed, 1, attempt]
    rng = np.random.default_rng(seed)
    tid = int(rng.integers(len(targets)))
    gt = targets[tid]
    lo, hi = cfg.query_size
    size = int(rng.integers(lo, min(hi, gt.node_count) + 1))
    if cfg.sample_mode == "bfs":
        nodes = bfs_sample(gt, size, rng)
        seed_q, corr = induced_subgraph(gt, nodes)
    else:
        nodes, walk_edges = rw_sample(gt, cfg.rw_steps_per_node * size, rng, max_nodes=size)
        corr = np.array(sorted(nodes), dtype=np.int64)
        pos = {int(t): i for i, t in enumerate(corr)}
        seed_q = Graph(gt.labels[corr], [(pos[a], pos[b]) for a, b in sorted(walk_edges)],
                       num_labels=gt.num_labels)
    level = cfg.noise_levels[index % len(cfg.noise_levels)]
    query, spec = inject_noise(seed_q, level, rng)
    if cfg.shuffle_query_nodes:
        perm = rng.permutation(query.node_count)
        query = relabel_nodes(query, perm)
        new_corr = np.empty_like(corr)
        new_corr[perm] = corr
        corr = new_corr
    mapping = NodeMapping.from_array(corr)
    return InstancePair(index, query, gt, mapping, spec, cfg.sample_mode, tid, "", attempt)


def _split_sizes(n: int, ratio) -> tuple[int, int, int]:
    total = sum(ratio)
    n_train = round(n * ratio[0] / total)
    n_val = round(n * ratio[1] / total)
    n_train = min(n_train, n)
    n_val = min(n_val, n - n_train)
    return n_train, n_val, n - n_train - n_val


def generate_dataset(cfg: DatasetConfig) -> Dataset:
    """Deduplicated pairs split into train/val/test by ``cfg.split_ratio``."""
    cfg.validate()
    if cfg.target_files:
        targets = [load_graph(p) for p in cfg.target_files]
    else:
        targets = [random_target(cfg.target_nodes, cfg.target_edges, cfg.num_labels,
                                 np.random.default_rng([cfg.seed, 0, i]))
                   for i in range(cfg.n_targets)]
    pairs, seen = [], set()
    attempt = 0
    max_attempts = cfg.max_attempts_factor * cfg.n_pairs
    while len(pairs) < cfg.n_pairs and attempt < max_attempts:
        try:
            pair = _make_pair(cfg, targets, len(pairs), attempt)
        except SizeTooLarge:
            attempt += 1
            continue
        attempt += 1
        k = pair.key()
        if k in seen:
            continue
        seen.add(k)
        pairs.append(pair)

    order = np.random.default_rng([cfg.seed, 2]).permutation(len(pairs))
    n_train, n_val, _ = _split_sizes(len(pairs), cfg.split_ratio)
    for rank, i in enumerate(order.tolist()):
        pairs[i].split = "train" if rank < n_train else ("val" if rank < n_train + n_val else "test")
    return Dataset(cfg, targets, pairs, shortfall=cfg.n_pairs - len(pairs))


# -- on-disk layout -----------------------------------------------------------

MANIFEST = "manifest.json"


def save_dataset(ds: Dataset, root) -> Path:
    root = Path(root)
    (root / "graphs").mkdir(parents=True, exist_ok=True)
    used_targets = sorted({p.target_id for p in ds.pairs})
    for tid in used_targets:
        save_graph(ds.targets[tid], root / "graphs" / f"target_{tid:05d}.json")
    records = []
    for p in ds.pairs:
        qpath = f"graphs/query_{p.pair_id:05d}.json"
        save_graph(p.query, root / qpath)
        records.append({
            "id": p.pair_id,
            "split": p.split,
            "query": qpath,
            "target": f"graphs/target_{p.target_id:05d}.json",
            "target_id": p.target_id,
            "correspondence": p.seed_correspondence.as_array(p.query.node_count).tolist(),
            "sample_mode": p.sample_mode,
            "seed": p.seed,
            "noise": asdict(p.noise),
        })
    manifest = {"format": 1, "config": ds.config.to_dict(), "shortfall": ds.shortfall, "pairs": records}
    (root / MANIFEST).write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return root


def load_dataset(root) -> Dataset:
    root = Path(root)
    path = root / MANIFEST
    if not path.exists():
        raise ConfigError(f"no dataset manifest at {path}")
    doc = json.loads(path.read_text(encoding="utf-8"))
    cfg = DatasetConfig.from_dict(doc["config"])
    target_cache: dict = {}
    pairs = []
    for rec in doc["pairs"]:
        tpath = rec["target"]
        if tpath not in target_cache:
            target_cache[tpath] = load_graph(root / tpath)
        pairs.append(InstancePair(
            pair_id=rec["id"],
            query=load_graph(root / rec["query"]),
            target=target_cache[tpath],
            seed_correspondence=NodeMapping.from_array(rec["correspondence"]),
            noise=NoiseSpec(**rec["noise"]),
            sample_mode=rec["sample_mode"],
            target_id=rec["target_id"],
            split=rec["split"],
            seed=rec["seed"],
        ))
    targets = [None] * (max((p.target_id for p in pairs), default=-1) + 1)
    for p in pairs:
        targets[p.target_id] = p.target
    return Dataset(cfg, targets, pairs, shortfall=doc.get("shortfall", 0))


def pairs_from(items: Sequence[InstancePair]) -> list[tuple[Graph, Graph]]:
    return [(p.query, p.target) for p in items]

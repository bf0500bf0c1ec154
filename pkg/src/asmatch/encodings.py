"""Per-node input features: label one-hot, mapping flag, LapPE and RWSE."""
from __future__ import annotations

import weakref
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, EmptyGraph
from .graph import Graph

MODES = ("lappe", "rwse", "both", "none")
ZERO_EIG = 1e-9


@dataclass(frozen=True)
class EncodingConfig:
    lap_k: int = 8
    rwse_m: int = 16
    mode: str = "rwse"

    def __post_init__(self):
        if self.lap_k < 1 or self.rwse_m < 1:
            raise ConfigError("lap_k and rwse_m must be >= 1")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")

    @property
    def width(self) -> int:
        return {"lappe": self.lap_k, "rwse": self.rwse_m,
                "both": self.lap_k + self.rwse_m, "none": 0}[self.mode]


@dataclass(frozen=True)
class NodeFeatures:
    label_onehot: np.ndarray  # (n, L)
    mapped_flag: np.ndarray   # (n,)
    pos_struct: np.ndarray    # (n, cfg.width)


def _round_robin(n: int):
    """Yield rounds of disjoint index pairs covering every pair once."""
    idx = list(range(n)) + ([-1] if n % 2 else [])
    m = len(idx)
    for _ in range(m - 1):
        pairs = [(idx[i], idx[m - 1 - i]) for i in range(m // 2)]
        pairs = [(min(a, b), max(a, b)) for a, b in pairs if a >= 0 and b >= 0]
        if pairs:
            p, q = np.array(pairs, dtype=np.int64).T
            yield p, q
        idx = [idx[0], idx[-1]] + idx[1:-1]


def jacobi_eigh(a: np.ndarray, tol: float = 1e-10, max_sweeps: int = 100):
    """Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.

    Rotations are applied in round-robin order so each round touches
    disjoint index pairs and can be applied together.  Stops when every
    off-diagonal magnitude is below ``tol``.  Returns ascending eigenvalues
    and the matching eigenvectors as columns.
    """
    a = np.array(a, dtype=np.float64)
    n = a.shape[0]
    v = np.eye(n)
    if n > 1:
        rounds = list(_round_robin(n))
        for _ in range(max_sweeps):
            off = np.abs(a - np.diag(np.diag(a))).max()
            if off < tol:
                break
            for p, q in rounds:
                apq = a[p, q]
                active = np.abs(apq) >= tol * 1e-3
                if not active.any():
                    continue
                p, q, apq = p[active], q[active], apq[active]
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.sign(theta) / (np.abs(theta) + np.sqrt(theta * theta + 1.0))
                t[theta == 0] = 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                ap, aq = a[p, :].copy(), a[q, :].copy()
                a[p, :] = c[:, None] * ap - s[:, None] * aq
                a[q, :] = s[:, None] * ap + c[:, None] * aq
                ap, aq = a[:, p].copy(), a[:, q].copy()
                a[:, p] = c * ap - s * aq
                a[:, q] = s * ap + c * aq
                vp, vq = v[:, p].copy(), v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    w = np.diag(a).copy()
    order = np.argsort(w, kind="stable")
    return w[order], v[:, order]


def normalized_laplacian(g: Graph) -> np.ndarray:
    """``I - D^-1/2 A D^-1/2`` with rows and columns of isolated nodes zeroed."""
    deg = g.degrees.astype(np.float64)
    inv_sqrt = np.zeros_like(deg)
    nz = deg > 0
    inv_sqrt[nz] = 1.0 / np.sqrt(deg[nz])
    lap = np.diag(nz.astype(np.float64)) - inv_sqrt[:, None] * g.adj * inv_sqrt[None, :]
    return lap


def canonical_sign(vec: np.ndarray) -> np.ndarray:
    """Flip ``vec`` so its largest-magnitude entry (lowest index on ties) is positive."""
    mag = np.abs(vec)
    i = int(np.flatnonzero(mag >= mag.max() - 1e-12)[0])
    return -vec if vec[i] < 0 else vec


def laplacian_spectrum(g: Graph, k: int):
    """Up to ``k`` smallest nonzero eigenpairs of the normalized Laplacian.

    Returns ``(values, vectors)``; ``vectors`` is ``(n, k)`` with unit-norm,
    sign-canonical columns and zero padding beyond the available pairs.
    """
    if g.node_count == 0:
        raise EmptyGraph("cannot encode an empty graph")
    w, v = jacobi_eigh(normalized_laplacian(g))
    keep = np.flatnonzero(w > ZERO_EIG)[: min(k, max(g.node_count - 1, 0))]
    vals = np.zeros(k)
    vecs = np.zeros((g.node_count, k))
    for col, j in enumerate(keep):
        vals[col] = w[j]
        vecs[:, col] = canonical_sign(v[:, j] / np.linalg.norm(v[:, j]))
    return vals[: len(keep)], vecs


def laplacian_pe(g: Graph, k: int) -> np.ndarray:
    return laplacian_spectrum(g, k)[1]


def rwse(g: Graph, m: int) -> np.ndarray:
    """Return probabilities ``(P^s)_uu`` for ``s = 1..m`` with ``P = D^-1 A``."""
    if g.node_count == 0:
        raise EmptyGraph("cannot encode an empty graph")
    deg = g.degrees.astype(np.float64)
    inv = np.zeros_like(deg)
    inv[deg > 0] = 1.0 / deg[deg > 0]
    p = inv[:, None] * g.adj
    out = np.zeros((g.node_count, m))
    pk = p.copy()
    for s in range(m):
        out[:, s] = np.diag(pk)
        pk = pk @ p
    return out


def random_sign_flip(pe: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Training-time augmentation: flip each eigenvector column at random."""
    signs = rng.choice([-1.0, 1.0], size=pe.shape[1])
    return pe * signs[None, :]


_CACHE: "weakref.WeakKeyDictionary[Graph, dict]" = weakref.WeakKeyDictionary()


def pos_struct(g: Graph, cfg: EncodingConfig) -> np.ndarray:
    """Positional/structural block for ``g``; cached per graph and config."""
    per_graph = _CACHE.setdefault(g, {})
    hit = per_graph.get(cfg)
    if hit is None:
        parts = []
        if cfg.mode in ("lappe", "both"):
            parts.append(laplacian_pe(g, cfg.lap_k))
        if cfg.mode in ("rwse", "both"):
            parts.append(rwse(g, cfg.rwse_m))
        if not parts:
            if g.node_count == 0:
                raise EmptyGraph("cannot encode an empty graph")
            parts.append(np.zeros((g.node_count, 0)))
        hit = np.concatenate(parts, axis=1)
        hit.setflags(write=False)
        per_graph[cfg] = hit
    return hit


def label_onehot(g: Graph, num_labels: int | None = None) -> np.ndarray:
    width = g.num_labels if num_labels is None else num_labels
    if g.node_count and int(g.labels.max()) >= width:
        raise ConfigError(f"label id {int(g.labels.max())} does not fit a one-hot of width {width}")
    out = np.zeros((g.node_count, width))
    out[np.arange(g.node_count), g.labels] = 1.0
    return out


def assemble_features(g: Graph, mapped, cfg: EncodingConfig, num_labels: int | None = None) -> NodeFeatures:
    flags = np.zeros(g.node_count)
    idx = np.fromiter((int(u) for u in mapped), dtype=np.int64)
    if idx.size:
        flags[idx] = 1.0
    return NodeFeatures(label_onehot(g, num_labels), flags, pos_struct(g, cfg))

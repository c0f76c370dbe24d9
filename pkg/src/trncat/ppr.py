"""Approximate personalized PageRank by local push, and top-K textual neighborhoods.

The PPR vector of a source s is the fixed point of

    pi = beta * T^T pi + (1 - beta) * e_s,     T[u, v] = w(u, v) / d(u)

so ``beta`` is the walk-continuation probability and ``1 - beta`` the
teleport mass.  Nodes without edges carry an implicit unit self-loop.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numba
import numpy as np
import scipy.sparse as sp

from .network import TextRichNetwork

DEFAULT_BETA = 0.85
DEFAULT_EPSILON = 1e-4
DEFAULT_K = 50


@dataclass(frozen=True)
class TransitionStructure:
    """Row-normalized random-walk transition in CSR form."""

    indptr: np.ndarray
    indices: np.ndarray
    weights: np.ndarray
    degree: np.ndarray
    self_frac: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.degree)

    @property
    def volume(self) -> float:
        return float(self.degree.sum())

    def matrix(self) -> sp.csr_matrix:
        """Transition matrix T with T[u, v] = w(u, v) / d(u)."""
        probs = self.weights / np.repeat(self.degree, np.diff(self.indptr))
        return sp.csr_matrix((probs, self.indices, self.indptr),
                             shape=(self.n_nodes, self.n_nodes))


def normalize_adjacency(network: TextRichNetwork) -> TransitionStructure:
    n = network.n_nodes
    if network.edges:
        u, v, w = (np.array(c) for c in zip(*network.edges))
        rows = np.concatenate([u, v]).astype(np.int64)
        cols = np.concatenate([v, u]).astype(np.int64)
        vals = np.concatenate([w, w]).astype(np.float64)
    else:
        rows = cols = np.zeros(0, dtype=np.int64)
        vals = np.zeros(0, dtype=np.float64)
    adj = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    degree = np.asarray(adj.sum(axis=1)).ravel()
    dangling = degree == 0
    if dangling.any():
        idx = np.flatnonzero(dangling)
        adj = adj + sp.csr_matrix((np.ones(len(idx)), (idx, idx)), shape=(n, n))
        degree = np.asarray(adj.sum(axis=1)).ravel()
    adj.sort_indices()
    self_frac = adj.diagonal() / degree
    return TransitionStructure(
        indptr=adj.indptr.astype(np.int64),
        indices=adj.indices.astype(np.int64),
        weights=adj.data.astype(np.float64),
        degree=degree.astype(np.float64),
        self_frac=self_frac.astype(np.float64),
    )


@dataclass(frozen=True)
class PprVector:
    source: int
    entries: Mapping[int, float]
    epsilon: float
    residual: Mapping[int, float] = field(default_factory=dict)
    n_pushes: int = 0

    @property
    def touched(self) -> int:
        return len(set(self.entries) | set(self.residual))

    def dense(self, n_nodes: int) -> np.ndarray:
        out = np.zeros(n_nodes)
        for k, v in self.entries.items():
            out[k] = v
        return out


@numba.njit(cache=True)
def _push(indptr, indices, weights, degree, self_frac, source, beta, epsilon,
          p, r, queued, touched):
    """Push loop over caller-owned zeroed workspaces; returns (n_touched, n_pushes)."""
    n = degree.shape[0]
    queue = np.empty(n, dtype=np.int64)
    head = 0
    size = 0
    n_touched = 1
    touched[0] = source
    r[source] = 1.0
    queued[source] = True
    queue[0] = source
    size = 1
    n_pushes = 0
    while size > 0:
        u = queue[head]
        head = (head + 1) % n
        size -= 1
        queued[u] = False
        mass = r[u]
        if mass <= epsilon * degree[u]:
            continue
        r[u] = 0.0
        n_pushes += 1
        # Self-loop mass is resolved as a geometric series.
        scale = 1.0 / (1.0 - beta * self_frac[u])
        p[u] += (1.0 - beta) * mass * scale
        spread = beta * mass * scale / degree[u]
        for k in range(indptr[u], indptr[u + 1]):
            v = indices[k]
            add = spread * weights[k]
            if v == u or add == 0.0:
                continue
            if r[v] == 0.0 and p[v] == 0.0:
                touched[n_touched] = v
                n_touched += 1
            r[v] += add
            if not queued[v] and r[v] > epsilon * degree[v]:
                queued[v] = True
                queue[(head + size) % n] = v
                size += 1
    return n_touched, n_pushes


class _Workspace:
    def __init__(self, n: int):
        self.p = np.zeros(n)
        self.r = np.zeros(n)
        self.queued = np.zeros(n, dtype=np.bool_)
        self.touched = np.zeros(n, dtype=np.int64)


def ppr_push(transition: TransitionStructure, source: int, beta: float = DEFAULT_BETA,
             epsilon: float = DEFAULT_EPSILON, _ws: _Workspace | None = None) -> PprVector:
    """Local push until every residual satisfies r(u) <= epsilon * d(u).

    The l1 error against the exact vector is then at most epsilon * vol(G).
    """
    if not epsilon > 0:
        raise ValueError(f"epsilon must be > 0, got {epsilon}")
    if not 0 <= beta < 1:
        raise ValueError(f"beta must lie in [0, 1), got {beta}")
    if not 0 <= source < transition.n_nodes:
        raise ValueError(f"source {source} not in graph")
    ws = _ws or _Workspace(transition.n_nodes)
    n_touched, n_pushes = _push(
        transition.indptr, transition.indices, transition.weights, transition.degree,
        transition.self_frac, source, float(beta), float(epsilon),
        ws.p, ws.r, ws.queued, ws.touched,
    )
    idx = ws.touched[:n_touched]
    entries = {int(i): float(ws.p[i]) for i in idx if ws.p[i] > 0}
    residual = {int(i): float(ws.r[i]) for i in idx if ws.r[i] > 0}
    ws.p[idx] = 0.0
    ws.r[idx] = 0.0
    ws.queued[idx] = False
    return PprVector(source, entries, epsilon, residual, n_pushes)


def topk_textual(vector: PprVector, K: int, network: TextRichNetwork) -> list[tuple[int, float]]:
    """Top-K textual nodes by score; ties by ascending id; the source is eligible."""
    if K < 1:
        raise ValueError("K must be >= 1")
    kinds = network.kinds
    cands = [(v, s) for v, s in vector.entries.items() if s > 0 and kinds[v] == "textual"]
    cands.sort(key=lambda vs: (-vs[1], vs[0]))
    return cands[:K]


@dataclass
class NeighborTable:
    neighbors: dict[int, list[tuple[int, float]]]
    beta: float
    epsilon: float
    K: int
    network_digest: str = ""

    def __len__(self) -> int:
        return len(self.neighbors)

    def __getitem__(self, node: int) -> list[tuple[int, float]]:
        return self.neighbors[node]

    def cache_key(self) -> str:
        return cache_key(self.network_digest, self.beta, self.epsilon, self.K)

    def padded(self, nodes: Sequence[int]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(neighbor ids, scores, mask) arrays of shape (len(nodes), max list length)."""
        rows = []
        for i in nodes:
            try:
                rows.append(self.neighbors[i])
            except KeyError:
                raise KeyError(f"node {i} has no neighbor-table row") from None
        width = max((len(r) for r in rows), default=0)
        idx = np.zeros((len(rows), width), dtype=np.int64)
        score = np.zeros((len(rows), width))
        mask = np.zeros((len(rows), width), dtype=bool)
        for b, row in enumerate(rows):
            for k, (j, s) in enumerate(row):
                idx[b, k], score[b, k], mask[b, k] = j, s, True
        return idx, score, mask

    def save(self, path: str | os.PathLike) -> None:
        with open(path, "w", encoding="utf-8") as f:
            f.write(f"# {self.cache_key()}\n")
            for src in sorted(self.neighbors):
                for j, s in self.neighbors[src]:
                    f.write(f"{src}\t{j}\t{s!r}\n")

    @classmethod
    def load(cls, path: str | os.PathLike, expected_key: str | None = None) -> "NeighborTable | None":
        """Load a cached table; ``None`` when the header does not match ``expected_key``."""
        with open(path, encoding="utf-8") as f:
            header = f.readline().rstrip("\n")
            if not header.startswith("# "):
                return None
            key = header[2:]
            if expected_key is not None and key != expected_key:
                return None
            params = dict(item.split("=", 1) for item in key.split())
            neighbors: dict[int, list[tuple[int, float]]] = {}
            for line in f:
                src, j, s = line.rstrip("\n").split("\t")
                neighbors.setdefault(int(src), []).append((int(j), float(s)))
        return cls(neighbors, float(params["beta"]), float(params["epsilon"]),
                   int(params["K"]), params["network"])


def cache_key(digest: str, beta: float, epsilon: float, K: int) -> str:
    return f"network={digest} beta={beta!r} epsilon={epsilon!r} K={K}"


def build_neighbor_table(network: TextRichNetwork, beta: float = DEFAULT_BETA,
                         epsilon: float = DEFAULT_EPSILON, K: int = DEFAULT_K,
                         sources: Iterable[int] | None = None) -> NeighborTable:
    transition = normalize_adjacency(network)
    ws = _Workspace(network.n_nodes)
    if sources is None:
        sources = network.textual_ids()
    neighbors = {}
    for s in sources:
        if network.kinds[s] != "textual":
            raise ValueError(f"node {s} is not textual")
        neighbors[int(s)] = topk_textual(ppr_push(transition, s, beta, epsilon, ws), K, network)
    return NeighborTable(dict(sorted(neighbors.items())), beta, epsilon, K, network.digest())


def max_pushes_bound(transition: TransitionStructure, beta: float, epsilon: float) -> float:
    """Each push removes more than (1 - beta) * epsilon * d_min of residual mass."""
    return 1.0 / ((1.0 - beta) * epsilon * float(transition.degree.min()))


def touched_bound(transition: TransitionStructure, beta: float, epsilon: float) -> float:
    return 1.0 / ((1.0 - beta) * epsilon) + transition.n_nodes


__all__ = [
    "TransitionStructure", "PprVector", "NeighborTable", "normalize_adjacency",
    "ppr_push", "topk_textual", "build_neighbor_table", "cache_key",
    "max_pushes_bound", "touched_bound",
]
